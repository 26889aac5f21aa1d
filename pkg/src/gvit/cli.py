"""Command-line pipeline: synth | ingest | train | eval | predict.

One flat YAML config drives every stage; the handful of global flags
(--seed, --out, --fold, --with-knn, --overwrite) override it. Each command
writes a provenance record (config hash, seed, backend) next to its
outputs so runs can be reproduced exactly.

Exit codes: 0 success, 2 config/validation error, 3 I/O or parse error,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__, kernels
from .errors import ConfigError, DomainError, GvitError, ParseError, TrainingDiverged
from .evaluate import emit_report, evaluate, knn_baseline
from .graph import GROUP_GASES, GROUPS, SensorGraph
from .ingest import (
    RawStream,
    baseline_correct,
    downsample,
    load_dataset,
    parse_stream,
    run_pipeline,
    save_dataset,
)
from .model import GViTConfig, GViTModel, predict_composition
from .synth import SensorParams, make_schedule, synth_stream, write_stream
from .train import TrainConfig, fold_seed, train_fold

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    """Flat run configuration; every field has a default except input paths."""

    # data / paths
    group: str = "co_ethylene"
    out_dir: str = "runs/demo"
    stream: str = ""  # recording file (synth writes, ingest reads)
    inputs: list = dataclasses.field(default_factory=list)  # [{path, group}]
    dataset_dir: str = ""  # defaults to <out_dir>/dataset
    checkpoint: str = ""  # defaults to <out_dir>/checkpoints/fold<k>.npz
    air: str = ""  # optional air-reference file for predict
    # synthetic generation
    n_segments: int = 60
    sample_rate: float = 20.0
    noise: float = 0.1
    # ingest
    downsample_factor: int = 4
    test_ratio: float = 0.16
    folds: int = 5
    # model
    gcn_layers: int = 2
    gcn_filters: int = 12
    d_model: int = 24
    pooled_nodes: int = 16
    encoder_blocks: int = 2
    attention_heads: int = 4
    mlp_hidden: int = 0
    positional_embedding: bool = True
    adjacency_mode: str = "symmetric"
    encoder_norm: str = "pre"
    # training
    epochs: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    accumulation: int = 8
    clip_norm: float = 1.0
    # evaluation
    threshold: float = 0.01
    knn_k: int = 5
    knn_window: int = 5
    # shared
    seed: int = 7
    fold: str = "all"

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        merged = {}
        if path:
            try:
                raw = yaml.safe_load(Path(path).read_text())
            except OSError as exc:
                raise ParseError(f"{path}: {exc}") from exc
            if raw is None:
                raw = {}
            if not isinstance(raw, dict):
                raise ConfigError(f"{path}: config must be a flat mapping")
            for key in raw:
                if key not in known:
                    raise ConfigError(f"{path}: unknown config field {key!r}")
            merged.update(raw)
        for key, val in (overrides or {}).items():
            if val is not None:
                merged[key] = val
        try:
            cfg = cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    def validate(self) -> "RunConfig":
        if self.group not in GROUPS:
            raise ConfigError(f"group must be one of {GROUPS}, got {self.group!r}")
        if not 0 < self.test_ratio < 1:
            raise ConfigError(f"test_ratio must be in (0,1), got {self.test_ratio}")
        if str(self.fold) != "all":
            try:
                int(self.fold)
            except ValueError:
                raise ConfigError(f"fold must be an index or 'all', got {self.fold!r}")
        self.model_config(seed=0)  # surface architecture invariants early
        return self

    def model_config(self, seed: int) -> GViTConfig:
        return GViTConfig(
            gcn_layers=self.gcn_layers,
            gcn_filters=self.gcn_filters,
            d_model=self.d_model,
            pooled_nodes=self.pooled_nodes,
            encoder_blocks=self.encoder_blocks,
            attention_heads=self.attention_heads,
            mlp_hidden=self.mlp_hidden,
            positional_embedding=self.positional_embedding,
            adjacency_mode=self.adjacency_mode,
            encoder_norm=self.encoder_norm,
            seed=seed,
        ).validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            eps=self.adam_eps, accumulation=self.accumulation,
            clip_norm=self.clip_norm, seed=self.seed,
        ).validate()

    def resolved_dataset_dir(self) -> Path:
        return Path(self.dataset_dir) if self.dataset_dir else Path(self.out_dir) / "dataset"


def _write_provenance(out_dir: Path, command: str, cfg: RunConfig):
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = dataclasses.asdict(cfg)
    blob = json.dumps(resolved, sort_keys=True).encode()
    record = {
        "command": command,
        "seed": cfg.seed,
        "config": resolved,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "backend": kernels.active_backend(),
        "version": __version__,
    }
    (out_dir / f"provenance_{command}.json").write_text(json.dumps(record, indent=2))


# -- commands --------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = make_schedule(cfg.n_segments, seed=cfg.seed)
    params = SensorParams.from_seed(cfg.seed)
    stream = synth_stream(schedule, group=cfg.group, sample_rate=cfg.sample_rate,
                          noise=cfg.noise, seed=cfg.seed, params=params)
    stream_path = Path(cfg.stream) if cfg.stream else out / "stream.txt"
    write_stream(stream, stream_path)
    manifest = {
        "seed": cfg.seed,
        "group": cfg.group,
        "sample_rate": cfg.sample_rate,
        "noise": cfg.noise,
        "schedule": schedule,
        "sensor_params": {
            "base": params.base.tolist(),
            "sens": params.sens.tolist(),
            "tau": params.tau.tolist(),
        },
        "rows": stream.n_rows,
    }
    (out / "synth_manifest.json").write_text(json.dumps(manifest, indent=2))
    _write_provenance(out, "synth", cfg)
    print(f"synth: wrote {stream.n_rows} rows ({len(schedule)} phases) to {stream_path}")
    return 0


def cmd_ingest(cfg: RunConfig) -> int:
    inputs = cfg.inputs or ([{"path": cfg.stream, "group": cfg.group}] if cfg.stream else [])
    if not inputs:
        default = Path(cfg.out_dir) / "stream.txt"  # where cmd_synth writes
        if default.exists():
            inputs = [{"path": str(default), "group": cfg.group}]
        else:
            raise ConfigError("ingest needs 'stream' or an 'inputs' list in the config")
    streams = []
    for item in inputs:
        path, group = item["path"], item.get("group", cfg.group)
        if not Path(path).exists():
            raise ParseError(f"{path}: recording file not found")
        streams.append(parse_stream(path, group))
        print(f"ingest: parsed {streams[-1].n_rows} rows from {path}")
    graphs, split, provenance = run_pipeline(
        streams, downsample_factor=cfg.downsample_factor,
        test_ratio=cfg.test_ratio, k=cfg.folds, seed=cfg.seed,
    )
    dataset_dir = cfg.resolved_dataset_dir()
    save_dataset(graphs, split, dataset_dir, provenance["max_per_gas"], provenance)
    _write_provenance(Path(cfg.out_dir), "ingest", cfg)
    for stage in provenance["stages"]:
        print(f"ingest: {stage['source']}: {stage['rows_parsed']} rows -> "
              f"{stage['rows_after_downsample']} at 1/{cfg.downsample_factor} -> "
              f"{stage['segments']} segments")
    print(f"{'class':<28}{'total':>8}{'train-val':>12}{'test':>8}")
    for key, cell in sorted(provenance["per_class"].items()):
        print(f"{key:<28}{cell['total']:>8}{cell['trainval']:>12}{cell['test']:>8}")
    print(f"ingest: {provenance['graphs']} graphs "
          f"({provenance['trainval']} train-val / {provenance['test']} test) "
          f"-> {dataset_dir}")
    return 0


def _group_folds(graphs, split, group):
    """Fold index lists restricted to one gas group."""
    return [[i for i in fold if graphs[i].group == group] for fold in split.folds]


def cmd_train(cfg: RunConfig, overwrite: bool = False) -> int:
    graphs, split, max_per_gas = load_dataset(cfg.resolved_dataset_dir())
    ckpt_dir = Path(cfg.out_dir) / "checkpoints"
    if ckpt_dir.exists() and any(ckpt_dir.iterdir()) and not overwrite:
        raise ConfigError(
            f"{ckpt_dir} already holds checkpoints; pass --overwrite to replace them"
        )
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    folds = _group_folds(graphs, split, cfg.group)
    trainval = [i for fold in folds for i in fold]
    if not trainval:
        raise DomainError(f"no train-val graphs for group {cfg.group!r}")
    selected = range(len(folds)) if str(cfg.fold) == "all" else [int(cfg.fold)]
    tcfg = cfg.train_config()
    summary = {"folds": {}, "group": cfg.group}
    for f in selected:
        if not 0 <= f < len(folds):
            raise ConfigError(f"fold {f} out of range 0..{len(folds) - 1}")
        val_idx = set(folds[f])
        train_graphs = [graphs[i] for i in trainval if i not in val_idx]
        val_graphs = [graphs[i] for i in folds[f]]
        seed_f = fold_seed(tcfg.seed, f)
        model = GViTModel(cfg.model_config(seed=seed_f), group=cfg.group,
                          target_scale=max_per_gas)
        fold_cfg = dataclasses.replace(tcfg, seed=seed_f)
        history = train_fold(model, train_graphs, val_graphs, fold_cfg)
        model.save(ckpt_dir / f"fold{f}.npz")
        (ckpt_dir / f"history{f}.json").write_text(
            json.dumps(history.to_dict(), indent=2))
        best = history.val_loss[history.selected_epoch]
        summary["folds"][str(f)] = {
            "best_val_rmse": best,
            "selected_epoch": history.selected_epoch,
        }
        print(f"train: fold {f}: best val RMSE {best:.6f} "
              f"at epoch {history.selected_epoch} "
              f"({len(train_graphs)} train / {len(val_graphs)} val graphs)")
    vals = [v["best_val_rmse"] for v in summary["folds"].values()]
    summary["mean_val_rmse"] = float(np.mean(vals))
    summary["std_val_rmse"] = float(np.std(vals))
    (ckpt_dir / "train_summary.json").write_text(json.dumps(summary, indent=2))
    _write_provenance(Path(cfg.out_dir), "train", cfg)
    print(f"train: mean val RMSE {summary['mean_val_rmse']:.6f} "
          f"over {len(vals)} fold(s) -> {ckpt_dir}")
    return 0


def _default_checkpoint(cfg: RunConfig) -> Path:
    fold = 0 if str(cfg.fold) == "all" else int(cfg.fold)
    return Path(cfg.out_dir) / "checkpoints" / f"fold{fold}.npz"


def cmd_eval(cfg: RunConfig, with_knn: bool = False) -> int:
    graphs, split, _ = load_dataset(cfg.resolved_dataset_dir())
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else _default_checkpoint(cfg)
    if not ckpt.exists():
        raise ParseError(f"{ckpt}: checkpoint not found")
    model = GViTModel.load(ckpt)
    test_graphs = [graphs[i] for i in split.test_idx
                   if model.group is None or graphs[i].group == model.group]
    if not test_graphs:
        raise DomainError(f"no test graphs for group {model.group!r}")
    report = evaluate(model, test_graphs, threshold=cfg.threshold)
    report_dir = Path(cfg.out_dir) / "reports"
    emit_report(report, report_dir, "report")
    print(f"eval: accuracy {report.accuracy:.4f} on {report.n_test} graphs, "
          f"RMSE {report.rmse:.4f}")
    for cond, val in report.r2.items():
        print(f"eval: R2 {cond}: " + ("n/a" if val is None else f"{val:.4f}"))
    if with_knn:
        train_graphs = [graphs[i] for i in split.trainval_idx
                        if graphs[i].group == test_graphs[0].group]
        knn = knn_baseline(train_graphs, test_graphs, k=cfg.knn_k,
                           window=cfg.knn_window, threshold=cfg.threshold)
        emit_report(knn, report_dir, "knn_report")
        print(f"eval: KNN accuracy {knn.accuracy:.4f}, RMSE {knn.rmse:.4f}")
    _write_provenance(Path(cfg.out_dir), "eval", cfg)
    return 0


def _load_slice(path, group) -> RawStream:
    if not Path(path).exists():
        raise ParseError(f"{path}: slice file not found")
    return parse_stream(path, group)


def cmd_predict(cfg: RunConfig, slice_path, air_path=None) -> int:
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else _default_checkpoint(cfg)
    if not ckpt.exists():
        raise ParseError(f"{ckpt}: checkpoint not found")
    model = GViTModel.load(ckpt)
    if model.target_scale is None:
        raise ConfigError(f"{ckpt}: checkpoint lacks the per-gas ppm maxima")
    group = model.group or cfg.group
    sl = downsample(_load_slice(slice_path, group), cfg.downsample_factor)
    if sl.n_rows < 1:
        raise DomainError("slice has no rows left after downsampling")
    air_ref = air_path or cfg.air
    if air_ref:
        air = downsample(_load_slice(air_ref, group), cfg.downsample_factor)
        base = air.sensors.mean(axis=0)
        features = sl.sensors - base
    else:
        corrected = baseline_correct(sl)  # needs an embedded air phase
        non_air = (corrected.conc[:, 0] > 0) | (corrected.conc[:, 1] > 0)
        features = corrected.sensors[non_air] if np.any(non_air) else corrected.sensors
    graph = SensorGraph(
        features=features,
        targets=np.zeros(2),
        targets_ppm=np.zeros(2),
        composition="A",  # placeholder; prediction ignores labels
        group=group,
        meta={"source": str(slice_path)},
    )
    pred = model.predict(graph)
    comp = predict_composition(pred, cfg.threshold)
    ppm = pred * model.target_scale
    gas_a, gas_b = GROUP_GASES[group]
    names = {"A": gas_a, "B": gas_b, "A+B": f"{gas_a}+{gas_b}", "none": "none"}
    print(f"predict: composition {names[comp]}")
    print(f"predict: {gas_a} {ppm[0]:.2f} ppm (normalized {pred[0]:.4f})")
    print(f"predict: {gas_b} {ppm[1]:.2f} ppm (normalized {pred[1]:.4f})")
    return 0


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gvit",
        description="Gas mixture identification and concentration estimation "
                    "from variable-length sensor-array time series.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic recording plus its manifest"),
        ("ingest", "recording file(s) -> labeled graph dataset + split manifest"),
        ("train", "train one model per fold, with validation-based selection"),
        ("eval", "score a checkpoint on the held-out test graphs"),
        ("predict", "composition + ppm concentrations for one recording slice"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--fold", default=None, help="fold index or 'all'")
        if name == "eval":
            p.add_argument("--with-knn", action="store_true",
                           help="also score the fixed-window KNN comparator")
        if name == "train":
            p.add_argument("--overwrite", action="store_true",
                           help="replace existing checkpoints")
        if name == "predict":
            p.add_argument("slice", help="recording slice (19-column text)")
            p.add_argument("air", nargs="?", default=None,
                           help="optional air-reference recording for the baseline")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out_dir": args.out, "fold": args.fold}
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg, overwrite=args.overwrite)
        if args.command == "eval":
            return cmd_eval(cfg, with_knn=args.with_knn)
        if args.command == "predict":
            return cmd_predict(cfg, args.slice, args.air)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ParseError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GvitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
