"""Turn continuous sensor-array recordings into labeled chain graphs.

Pipeline order is fixed: parse -> downsample -> baseline_correct ->
segment -> normalize_targets -> split. Each stage is a pure transform;
`run_pipeline` chains them and records row/segment counts into a
provenance dict.

Recording files are whitespace-delimited text with 19 numeric columns:
time (s), setpoint of gas A (ppm), setpoint of gas B (ppm), then the 16
sensor channels. An optional single header line is skipped.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError
from .graph import (
    GROUPS,
    N_SENSORS,
    SensorGraph,
    composition_of,
)

N_COLUMNS = 3 + N_SENSORS


@dataclass
class RawStream:
    """A continuous recording: timestamps, two setpoint columns, 16 channels."""

    time: np.ndarray
    conc: np.ndarray  # (n, 2) ppm setpoints for (gas A, gas B)
    sensors: np.ndarray  # (n, 16)
    group: str
    source: str = ""

    @property
    def n_rows(self) -> int:
        return self.time.shape[0]

    def validate(self):
        if self.sensors.shape != (self.n_rows, N_SENSORS):
            raise DomainError(f"sensor block must be n x {N_SENSORS}")
        if self.conc.shape != (self.n_rows, 2):
            raise DomainError("setpoint block must be n x 2")
        if np.any(np.diff(self.time) < 0):
            raise DomainError("timestamps must be non-decreasing")
        if np.any(self.conc < 0):
            raise DomainError("setpoint concentrations must be >= 0")
        return self


@dataclass
class Segment:
    """A maximal run of rows with one constant, non-air setpoint pair."""

    features: np.ndarray  # (n, 16) baseline-corrected
    targets_ppm: np.ndarray  # (2,)
    group: str
    source: str = ""
    start: int = 0
    end: int = 0

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def composition(self) -> str:
        return composition_of(self.targets_ppm[0], self.targets_ppm[1])


@dataclass
class DatasetSplit:
    """Test/train-val membership plus the k-fold partition of train-val."""

    test_idx: list
    trainval_idx: list
    folds: list = field(default_factory=list)
    seed: int = 0

    def validate(self, n_graphs: int):
        test, trainval = set(self.test_idx), set(self.trainval_idx)
        if test & trainval:
            raise DomainError("test and train-val sets overlap")
        if test | trainval != set(range(n_graphs)):
            raise DomainError("split does not cover the corpus")
        if self.folds:
            pooled = [i for fold in self.folds for i in fold]
            if sorted(pooled) != sorted(self.trainval_idx):
                raise DomainError("folds do not partition the train-val set")
        return self


# -- parsing -------------------------------------------------------------------


def parse_stream(path, group: str) -> RawStream:
    """Read a 19-column recording file; raises ParseError naming the bad line."""
    path = Path(path)
    if group not in GROUPS:
        raise DomainError(f"unknown group {group!r}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    lines = text.splitlines()
    skip = _header_lines(lines, path)
    try:
        data = np.loadtxt(path, skiprows=skip, ndmin=2)
    except ValueError:
        _diagnose_rows(lines, skip, path)  # always raises
        raise
    if data.size == 0:
        raise ParseError(f"{path}: no data rows")
    if data.shape[1] != N_COLUMNS:
        _diagnose_rows(lines, skip, path)
        raise ParseError(f"{path}: expected {N_COLUMNS} columns, got {data.shape[1]}")
    return RawStream(
        time=data[:, 0].copy(),
        conc=data[:, 1:3].copy(),
        sensors=data[:, 3:].copy(),
        group=group,
        source=str(path),
    ).validate()


def _header_lines(lines, path) -> int:
    """Number of leading header lines (0 or 1)."""
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        try:
            float(stripped.split()[0])
            return 0
        except ValueError:
            return 1
    raise ParseError(f"{path}: file is empty")


def _diagnose_rows(lines, skip: int, path):
    """Scan line by line to point the parse error at the offending row."""
    seen = 0
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        seen += 1
        if seen <= skip:
            continue
        tokens = stripped.split()
        if len(tokens) != N_COLUMNS:
            raise ParseError(
                f"{path}: line {lineno}: expected {N_COLUMNS} columns, "
                f"got {len(tokens)}"
            )
        for tok in tokens:
            try:
                float(tok)
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric field {tok!r}")
    raise ParseError(f"{path}: no data rows")


# -- stream transforms -----------------------------------------------------------


def downsample(s: RawStream, factor: int = 20) -> RawStream:
    """Decimate: keep rows 0, factor, 2*factor, ... (100 Hz / 20 = 5 Hz)."""
    if factor < 1:
        raise DomainError(f"downsample factor must be >= 1, got {factor}")
    return RawStream(
        time=s.time[::factor].copy(),
        conc=s.conc[::factor].copy(),
        sensors=s.sensors[::factor].copy(),
        group=s.group,
        source=s.source,
    )


def _runs(mask: np.ndarray):
    """Maximal runs of equal values in a boolean mask as (start, end, value)."""
    n = mask.shape[0]
    if n == 0:
        return []
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    return [(int(bounds[i]), int(bounds[i + 1]), bool(mask[bounds[i]]))
            for i in range(len(bounds) - 1)]


def baseline_correct(s: RawStream) -> RawStream:
    """Subtract the per-channel mean of the most recent air phase.

    Air rows subtract their own phase's mean (an all-air stream corrects to
    ~0). Rows before the first air phase fall back to that first phase's
    mean so that recordings starting mid-exposure stay usable.
    """
    air = (s.conc[:, 0] == 0) & (s.conc[:, 1] == 0)
    if not np.any(air):
        raise DomainError("no air phase in stream; baseline unobtainable")
    corrected = s.sensors.copy()
    air_runs = [(a, b) for a, b, is_air in _runs(air) if is_air]
    base = s.sensors[air_runs[0][0]:air_runs[0][1]].mean(axis=0)
    for a, b, is_air in _runs(air):
        if is_air:
            base = s.sensors[a:b].mean(axis=0)
        corrected[a:b] -= base
    return RawStream(
        time=s.time.copy(),
        conc=s.conc.copy(),
        sensors=corrected,
        group=s.group,
        source=s.source,
    )


def segment(s: RawStream) -> list[Segment]:
    """Split at every setpoint-pair change and drop the air phases."""
    if s.n_rows == 0:
        return []
    changed = np.any(s.conc[1:] != s.conc[:-1], axis=1)
    bounds = np.concatenate(([0], np.flatnonzero(changed) + 1, [s.n_rows]))
    out = []
    for i in range(len(bounds) - 1):
        a, b = int(bounds[i]), int(bounds[i + 1])
        ca, cb = s.conc[a]
        if ca == 0 and cb == 0:
            continue
        out.append(Segment(
            features=s.sensors[a:b].copy(),
            targets_ppm=np.array([ca, cb]),
            group=s.group,
            source=s.source,
            start=a,
            end=b,
        ))
    return out


# -- targets and splitting --------------------------------------------------------


def target_maxima(segments) -> np.ndarray:
    """Per-gas ppm maxima over the corpus (the Eq.-style normalizer)."""
    if not segments:
        raise DomainError("no segments to take maxima over")
    return np.max([seg.targets_ppm for seg in segments], axis=0)


def normalize_targets(segments, max_per_gas) -> list[SensorGraph]:
    """Divide each target by its gas's corpus maximum; emit SensorGraphs."""
    max_per_gas = np.asarray(max_per_gas, dtype=np.float64)
    if np.any(max_per_gas <= 0):
        raise DomainError(f"per-gas maxima must be positive, got {max_per_gas}")
    graphs = []
    for seg in segments:
        targets = seg.targets_ppm / max_per_gas
        graphs.append(SensorGraph(
            features=seg.features,
            targets=targets,
            targets_ppm=seg.targets_ppm.copy(),
            composition=seg.composition,
            group=seg.group,
            meta={"source": seg.source, "start": seg.start, "end": seg.end},
        ).validate())
    return graphs


def _class_key(g: SensorGraph):
    return (g.group, g.composition)


def stratified_split(graphs, test_ratio: float = 0.16, seed: int = 0) -> DatasetSplit:
    """Hold out ceil(test_ratio * class size) samples per (group, composition).

    Ceiling per class reproduces the published per-class test counts at
    ratio 0.16; the draw is a seeded permutation, so the same seed always
    yields the same split.
    """
    if not 0 < test_ratio < 1:
        raise DomainError(f"test ratio must be in (0, 1), got {test_ratio}")
    by_class: dict = {}
    for i, g in enumerate(graphs):
        by_class.setdefault(_class_key(g), []).append(i)
    rng = np.random.default_rng(seed)
    test, trainval = [], []
    for key in sorted(by_class):
        members = by_class[key]
        if len(members) < 2:
            raise DomainError(
                f"class {key} has {len(members)} sample(s); need at least 2 to split"
            )
        n_test = int(np.ceil(test_ratio * len(members)))
        order = rng.permutation(len(members))
        picked = [members[j] for j in order]
        test.extend(picked[:n_test])
        trainval.extend(picked[n_test:])
    return DatasetSplit(test_idx=sorted(test), trainval_idx=sorted(trainval),
                        seed=seed).validate(len(graphs))


def kfold(graphs, trainval_idx, k: int = 5, seed: int = 0) -> list:
    """Stratified partition of the train-val indices into k disjoint folds.

    Per class, members are dealt base-count to every fold and the leftovers
    to the currently least-loaded folds, keeping total fold sizes within
    one of each other.
    """
    if k < 2:
        raise DomainError(f"k must be >= 2, got {k}")
    if k > len(trainval_idx):
        raise DomainError(f"k={k} exceeds the {len(trainval_idx)} train-val samples")
    by_class: dict = {}
    for i in trainval_idx:
        by_class.setdefault(_class_key(graphs[i]), []).append(i)
    smallest = min(len(v) for v in by_class.values())
    if smallest < k:
        warnings.warn(
            f"a class has only {smallest} train-val member(s) for k={k}; "
            "stratification degrades to best effort",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    loads = np.zeros(k, dtype=int)
    for key in sorted(by_class):
        members = by_class[key]
        order = rng.permutation(len(members))
        picked = [members[j] for j in order]
        base, extra = divmod(len(picked), k)
        extra_folds = sorted(range(k), key=lambda f: (loads[f], f))[:extra]
        cursor = 0
        for f in range(k):
            take = base + (1 if f in extra_folds else 0)
            folds[f].extend(picked[cursor:cursor + take])
            loads[f] += take
            cursor += take
    return [sorted(f) for f in folds]


# -- pipeline orchestration ---------------------------------------------------------


def run_pipeline(streams, downsample_factor: int = 20, test_ratio: float = 0.16,
                 k: int = 5, seed: int = 0, max_per_gas=None):
    """parse -> downsample -> baseline -> segment -> normalize -> split.

    ``streams`` are already-parsed RawStreams (one per recording file).
    Returns (graphs, split, provenance).
    """
    provenance = {"stages": [], "per_class": {}}
    segments = []
    for s in streams:
        rows_in = s.n_rows
        s = downsample(s, downsample_factor)
        s = baseline_correct(s)
        segs = segment(s)
        provenance["stages"].append({
            "source": s.source,
            "rows_parsed": rows_in,
            "rows_after_downsample": s.n_rows,
            "segments": len(segs),
        })
        segments.extend(segs)
    if max_per_gas is None:
        max_per_gas = target_maxima(segments)
    graphs = normalize_targets(segments, max_per_gas)
    split = stratified_split(graphs, test_ratio, seed)
    split.folds = kfold(graphs, split.trainval_idx, k, seed)
    split.validate(len(graphs))
    counts: dict = {}
    test_set = set(split.test_idx)
    for i, g in enumerate(graphs):
        key = f"{g.group}/{g.composition}"
        cell = counts.setdefault(key, {"total": 0, "trainval": 0, "test": 0})
        cell["total"] += 1
        cell["test" if i in test_set else "trainval"] += 1
    provenance["per_class"] = counts
    provenance["graphs"] = len(graphs)
    provenance["test"] = len(split.test_idx)
    provenance["trainval"] = len(split.trainval_idx)
    provenance["max_per_gas"] = np.asarray(max_per_gas, dtype=float).tolist()
    provenance["seed"] = seed
    return graphs, split, provenance


# -- dataset directory io -------------------------------------------------------------


def save_dataset(graphs, split: DatasetSplit, out_dir, max_per_gas,
                 provenance=None):
    """Write per-graph npz files plus the split manifest."""
    out_dir = Path(out_dir)
    graph_dir = out_dir / "graphs"
    graph_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, g in enumerate(graphs):
        name = f"g{i:05d}.npz"
        meta = {"composition": g.composition, "group": g.group, **g.meta}
        np.savez(
            graph_dir / name,
            features=g.features,
            targets=g.targets,
            targets_ppm=g.targets_ppm,
            __meta__=np.array(json.dumps(meta)),
        )
        files.append(name)
    manifest = {
        "files": files,
        "test_idx": [int(i) for i in split.test_idx],
        "trainval_idx": [int(i) for i in split.trainval_idx],
        "folds": [[int(i) for i in fold] for fold in split.folds],
        "seed": int(split.seed),
        "max_per_gas": np.asarray(max_per_gas, dtype=float).tolist(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    if provenance is not None:
        (out_dir / "provenance.json").write_text(json.dumps(provenance, indent=2))
    return out_dir


def load_dataset(dataset_dir):
    """Read back a dataset directory; validates every graph's invariants."""
    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        raise ParseError(f"{manifest_path}: manifest not found")
    manifest = json.loads(manifest_path.read_text())
    graphs = []
    for name in manifest["files"]:
        with np.load(dataset_dir / "graphs" / name, allow_pickle=False) as npz:
            meta = json.loads(str(npz["__meta__"]))
            graphs.append(SensorGraph(
                features=npz["features"],
                targets=npz["targets"],
                targets_ppm=npz["targets_ppm"],
                composition=meta.pop("composition"),
                group=meta.pop("group"),
                meta=meta,
            ).validate())
    split = DatasetSplit(
        test_idx=manifest["test_idx"],
        trainval_idx=manifest["trainval_idx"],
        folds=manifest["folds"],
        seed=manifest["seed"],
    ).validate(len(graphs))
    return graphs, split, np.asarray(manifest["max_per_gas"], dtype=np.float64)
