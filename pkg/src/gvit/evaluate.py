"""Metrics for composition classification and concentration regression.

The confusion matrix covers the three composition classes; graphs the
model calls "none" (both outputs under threshold) are excluded from the
matrix and tallied as anomalies per true class, but still count against
accuracy. R-squared is the coefficient of determination, so a predictor
worse than the target mean goes negative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .graph import COMPOSITIONS
from .model import predict_composition

R2_CONDITIONS = ("mixed_a", "mixed_b", "pure_a", "pure_b")


def r_squared(preds, truths):
    """1 - SS_res / SS_tot; None when the truths are constant (undefined)."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape:
        raise DomainError(f"shape mismatch {preds.shape} vs {truths.shape}")
    if preds.size < 2:
        raise DomainError("r_squared needs at least 2 samples")
    ss_tot = float(np.sum((truths - truths.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    ss_res = float(np.sum((preds - truths) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass
class MetricsReport:
    group: str
    n_test: int
    threshold: float
    accuracy: float
    confusion: list  # 3x3, rows true / cols predicted, over COMPOSITIONS
    anomalies: list  # per true class, predictions of "none"
    class_counts: list  # per true class test-set size
    r2: dict  # condition -> float or None
    rmse: float
    per_graph: list = field(default_factory=list)

    def validate(self) -> "MetricsReport":
        conf = np.asarray(self.confusion)
        if conf.shape != (3, 3):
            raise DomainError(f"confusion matrix must be 3x3, got {conf.shape}")
        for r in range(3):
            if conf[r].sum() + self.anomalies[r] != self.class_counts[r]:
                raise DomainError(
                    f"row {COMPOSITIONS[r]}: confusion row sum {conf[r].sum()} + "
                    f"{self.anomalies[r]} anomalies != {self.class_counts[r]} samples"
                )
        total = sum(self.class_counts)
        if total != self.n_test:
            raise DomainError("class counts do not add up to the test-set size")
        if total and abs(self.accuracy - np.trace(conf) / total) > 1e-12:
            raise DomainError("accuracy is not trace/total")
        if any(v is not None and v > 1.0 + 1e-12 for v in self.r2.values()):
            raise DomainError("r2 cannot exceed 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d).validate()


def _build_report(group, entries, threshold) -> MetricsReport:
    """Assemble a MetricsReport from (graph, clamped 2-vector pred) pairs."""
    idx = {c: i for i, c in enumerate(COMPOSITIONS)}
    confusion = np.zeros((3, 3), dtype=int)
    anomalies = [0, 0, 0]
    class_counts = [0, 0, 0]
    per_graph = []
    correct = 0
    for rank, (g, pred) in enumerate(entries):
        true_c = g.composition
        pred_c = predict_composition(pred, threshold)
        class_counts[idx[true_c]] += 1
        if pred_c == "none":
            anomalies[idx[true_c]] += 1
        else:
            confusion[idx[true_c], idx[pred_c]] += 1
        if pred_c == true_c:
            correct += 1
        per_graph.append({
            "index": rank,
            "source": g.meta.get("source", ""),
            "n_nodes": int(g.n_nodes),
            "group": g.group,
            "true_comp": true_c,
            "pred_comp": pred_c,
            "true_a": float(g.targets[0]),
            "true_b": float(g.targets[1]),
            "pred_a": float(pred[0]),
            "pred_b": float(pred[1]),
        })
    preds = np.array([[r["pred_a"], r["pred_b"]] for r in per_graph])
    truths = np.array([[r["true_a"], r["true_b"]] for r in per_graph])
    comps = [r["true_comp"] for r in per_graph]

    def cond_r2(comp, gas):
        rows = [i for i, c in enumerate(comps) if c == comp]
        if len(rows) < 2:
            return None
        return r_squared(preds[rows, gas], truths[rows, gas])

    r2 = {
        "mixed_a": cond_r2("A+B", 0),
        "mixed_b": cond_r2("A+B", 1),
        "pure_a": cond_r2("A", 0),
        "pure_b": cond_r2("B", 1),
    }
    diff = preds - truths
    rmse = float(np.sqrt(np.sum(diff * diff) / diff.size))
    return MetricsReport(
        group=group,
        n_test=len(entries),
        threshold=threshold,
        accuracy=float(correct / len(entries)),
        confusion=confusion.tolist(),
        anomalies=anomalies,
        class_counts=class_counts,
        r2=r2,
        rmse=rmse,
        per_graph=per_graph,
    ).validate()


def evaluate(model, graphs, threshold: float = 0.01) -> MetricsReport:
    """Run the model over the test graphs and score every surface."""
    if not graphs:
        raise DomainError("empty test set")
    groups = {g.group for g in graphs}
    if model.group is not None and groups - {model.group}:
        raise ConfigError(
            f"model is for group {model.group!r}, data has {sorted(groups)}"
        )
    entries = [(g, model.predict(g)) for g in graphs]
    return _build_report(model.group or groups.pop(), entries, threshold)


def knn_baseline(train_graphs, test_graphs, k: int = 5, window: int = 5,
                 threshold: float = 0.01) -> MetricsReport:
    """Fixed-length comparator: mean targets of the k nearest steady-state tails.

    Each graph is reduced to its last `window` nodes flattened to one
    vector; distance is Euclidean. This is the methodology the model is
    meant to beat on mixed-gas regression.
    """
    if not train_graphs or not test_graphs:
        raise DomainError("knn_baseline needs non-empty train and test sets")
    if k < 1 or k > len(train_graphs):
        raise DomainError(f"k={k} outside 1..{len(train_graphs)}")
    short = [g for g in train_graphs + test_graphs if g.n_nodes < window]
    if short:
        raise DomainError(
            f"{len(short)} graph(s) shorter than the {window}-node window"
        )
    train_vecs = np.stack([g.features[-window:].ravel() for g in train_graphs])
    train_targets = np.stack([g.targets for g in train_graphs])
    entries = []
    for g in test_graphs:
        vec = g.features[-window:].ravel()
        d2 = np.sum((train_vecs - vec) ** 2, axis=1)
        nearest = np.argsort(d2, kind="stable")[:k]
        pred = np.clip(train_targets[nearest].mean(axis=0), 0.0, 1.0)
        entries.append((g, pred))
    group = test_graphs[0].group
    return _build_report(group, entries, threshold)


# -- report files ---------------------------------------------------------------

_TSV_COLUMNS = ("index", "source", "n_nodes", "group", "true_comp", "pred_comp",
                "true_a", "true_b", "pred_a", "pred_b")


def emit_report(report: MetricsReport, out_dir, stem: str = "report"):
    """Write the structured report plus the flat per-graph table.

    Returns (json_path, tsv_path). The table has one row per test graph
    and is the data source for external error-map plotting.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    tsv_path = out_dir / f"{stem}_per_graph.tsv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2))
    lines = ["\t".join(_TSV_COLUMNS)]
    for row in report.per_graph:
        lines.append("\t".join(
            repr(row[c]) if isinstance(row[c], float) else str(row[c])
            for c in _TSV_COLUMNS
        ))
    tsv_path.write_text("\n".join(lines) + "\n")
    return json_path, tsv_path


def load_report(json_path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(json_path).read_text()))
