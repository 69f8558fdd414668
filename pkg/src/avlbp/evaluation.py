"""Cross-validated evaluation: folds, recognition rate, ROC/AUC, comparisons."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from . import classify
from .classify import ClassifierSpec
from .errors import EmptyDataError, SchemaError
from .features import Dataset


def _binary(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.dtype.kind in "US":
        bad = ~np.isin(arr, ("artery", "vein"))
        if bad.any():
            raise ValueError(f"unknown class label {arr[bad][0]!r}")
        return (arr == "artery").astype(np.int8)
    arr = arr.astype(np.int64)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("numeric labels must be 0 (vein) or 1 (artery)")
    return arr.astype(np.int8)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray  # sample index -> fold index
    seed: int
    grouped: bool = False

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def stratified_kfold(labels, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Stratified partition into ``k`` folds.

    Each class is shuffled with ``seed`` and dealt round-robin, continuing
    the fold counter from one class to the next, so both the overall fold
    sizes and the per-class counts differ by at most one.
    """
    y = _binary(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    assignment = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            name = "artery" if cls == 1 else "vein"
            raise ValueError(f"class {name} has {len(idx)} samples, fewer than k={k}")
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = (offset + np.arange(len(idx))) % k
        offset += len(idx)
    return FoldAssignment(k, assignment, seed)


def group_kfold(groups: Sequence[str], labels, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Folds that never split a group (image) across train and test.

    Groups are shuffled with ``seed`` and assigned greedily, largest first,
    to the currently smallest fold.
    """
    y = _binary(labels)
    groups = list(groups)
    names = sorted(set(groups))
    if len(names) < k:
        raise ValueError(f"{len(names)} groups cannot fill {k} folds")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    names = [names[i] for i in rng.permutation(len(names))]
    members = {g: [] for g in names}
    for i, g in enumerate(groups):
        members[g].append(i)
    names.sort(key=lambda g: -len(members[g]))  # stable: ties keep shuffled order
    sizes = np.zeros(k, dtype=np.int64)
    assignment = np.empty(len(y), dtype=np.int64)
    for g in names:
        fold = int(np.argmin(sizes))
        assignment[members[g]] = fold
        sizes[fold] += len(members[g])
    return FoldAssignment(k, assignment, seed, grouped=True)


@dataclass(frozen=True)
class ConfusionCounts:
    """Artery is the positive class."""
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_scores(cls, scores, labels) -> "ConfusionCounts":
        pred = np.asarray(scores) >= 0.5
        truth = _binary(labels).astype(bool)
        return cls(int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
                   int(np.sum(~pred & ~truth)), int(np.sum(~pred & truth)))

    def as_dict(self) -> dict:
        return {"TP": self.tp, "FP": self.fp, "TN": self.tn, "FN": self.fn}


def recognition_rate(c: ConfusionCounts) -> float:
    """Percentage of correctly classified samples, 100 (TP + TN) / total."""
    if c.total <= 0:
        raise EmptyDataError("recognition rate of an empty confusion table")
    return 100.0 * (c.tp + c.tn) / (c.tp + c.fp + c.tn + c.fn)


def roc_auc(scores, labels) -> float:
    """Probability that a random artery outscores a random vein (ties count half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) pairs sweeping the threshold down through every distinct score."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels).astype(bool)
    n_pos, n_neg = max(int(y.sum()), 1), max(int((~y).sum()), 1)
    points = [(0.0, 0.0)]
    for thr in np.unique(s)[::-1]:
        pred = s >= thr
        points.append((float(np.sum(pred & ~y) / n_neg), float(np.sum(pred & y) / n_pos)))
    return points


@dataclass
class EvalReport:
    spec: ClassifierSpec
    schema_id: str
    k: int
    cv_seed: int
    grouped: bool
    fold_counts: list[ConfusionCounts]
    scores: np.ndarray
    labels: np.ndarray
    keys: list[tuple[str, int]]
    config: dict = field(default_factory=dict)

    @property
    def pooled(self) -> ConfusionCounts:
        total = ConfusionCounts()
        for c in self.fold_counts:
            total = total + c
        return total

    @property
    def recognition_rate(self) -> float:
        return recognition_rate(self.pooled)

    @property
    def auc(self) -> float:
        return roc_auc(self.scores, self.labels)

    @property
    def fold_rates(self) -> list[float]:
        return [recognition_rate(c) for c in self.fold_counts]

    def to_json(self) -> dict:
        return {
            "note": "recognition rate and AUC are pooled over all held-out predictions",
            "spec": self.spec.to_json(),
            "schema_id": self.schema_id,
            "folds": self.k,
            "cv_seed": self.cv_seed,
            "classifier_seed": int(self.spec.seed),
            "fold_mode": "group_by_image" if self.grouped else "stratified_segments",
            "n_samples": int(len(self.labels)),
            "pooled": self.pooled.as_dict(),
            "recognition_rate": self.recognition_rate,
            "auc": self.auc,
            "per_fold": [dict(c.as_dict(), fold=i, recognition_rate=r)
                         for i, (c, r) in enumerate(zip(self.fold_counts, self.fold_rates))],
            "roc": [list(p) for p in roc_points(self.scores, self.labels)],
            "config": self.config,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        out = io.StringIO()
        pooled = self.pooled
        out.write("# metrics pooled over held-out predictions of all folds\n")
        for key, value in [
            ("classifier", self.spec.kind),
            ("hyperparameters", json.dumps(self.spec.resolved(), sort_keys=True)),
            ("classifier_seed", self.spec.seed),
            ("schema_id", self.schema_id),
            ("folds", self.k),
            ("cv_seed", self.cv_seed),
            ("fold_mode", "group_by_image" if self.grouped else "stratified_segments"),
            ("n_samples", len(self.labels)),
            ("TP", pooled.tp), ("FP", pooled.fp), ("TN", pooled.tn), ("FN", pooled.fn),
            ("recognition_rate", f"{self.recognition_rate:.4f}"),
            ("auc", f"{self.auc:.6f}"),
        ]:
            out.write(f"{key}: {value}\n")
        out.write("\n[per_fold]\nfold,TP,FP,TN,FN,recognition_rate\n")
        for i, (c, r) in enumerate(zip(self.fold_counts, self.fold_rates)):
            out.write(f"{i},{c.tp},{c.fp},{c.tn},{c.fn},{r:.4f}\n")
        out.write("\n[roc]\nfpr,tpr\n")
        for fpr, tpr in roc_points(self.scores, self.labels):
            out.write(f"{fpr!r},{tpr!r}\n")
        if self.config:
            out.write("\n[config]\n")
            for key, value in self.config.items():
                out.write(f"{key}: {value}\n")
        return out.getvalue()


def cross_validate(spec: ClassifierSpec, ds: Dataset, k: int = 10, seed: int = 0,
                   group_by_image: bool = False, folds: FoldAssignment | None = None,
                   config: Mapping | None = None) -> EvalReport:
    """Train on k-1 folds, score the held-out fold, pool every held-out score."""
    if folds is None:
        folds = (group_kfold(ds.image_ids, ds.y, k, seed) if group_by_image
                 else stratified_kfold(ds.y, k, seed))
    if len(folds.assignment) != len(ds):
        raise ValueError("fold assignment does not match the dataset size")
    scores = np.empty(len(ds))
    counts = []
    for fold in range(folds.k):
        test = folds.test_index(fold)
        model = classify.train(spec, ds.subset(folds.train_index(fold)))
        scores[test] = model.scores(ds.X[test])
        counts.append(ConfusionCounts.from_scores(scores[test], ds.y[test]))
    return EvalReport(spec, ds.schema_id, folds.k, folds.seed, folds.grouped, counts, scores,
                      ds.y.copy(), ds.keys, dict(config or {}))


@dataclass
class ComparisonTable:
    schemas: list[str]
    classifiers: list[str]
    rates: np.ndarray  # (n_classifiers, n_schemas)
    aucs: np.ndarray
    reports: dict = field(default_factory=dict)

    @property
    def rate_averages(self) -> np.ndarray:
        return self.rates.mean(axis=0)

    @property
    def auc_averages(self) -> np.ndarray:
        return self.aucs.mean(axis=0)

    @staticmethod
    def rank(values) -> np.ndarray:
        """1 = best (largest); equal values share the smaller rank."""
        values = np.asarray(values)
        return np.array([1 + int(np.sum(values > v)) for v in values])

    def render(self, metric: str = "rate") -> str:
        table = self.rates if metric == "rate" else self.aucs
        fmt = "{:.1f}" if metric == "rate" else "{:.2f}"
        title = ("Recognition rate (%)" if metric == "rate" else "AUC") + " per classifier and feature set"
        avg = table.mean(axis=0)
        rows = [["classifier"] + self.schemas]
        rows += [[c] + [fmt.format(v) for v in table[i]] for i, c in enumerate(self.classifiers)]
        rows.append(["Ave. perf." if metric == "rate" else "Ave. AUC"] + [fmt.format(v) for v in avg])
        rows.append(["Ranking"] + [str(r) for r in self.rank(avg)])
        widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
        lines = [title]
        for r in rows:
            lines.append("  ".join(cell.ljust(widths[0]) if j == 0 else cell.rjust(widths[j])
                                   for j, cell in enumerate(r)))
        return "\n".join(lines) + "\n"


def compare(specs: Sequence[ClassifierSpec], datasets: Mapping[str, Dataset], k: int = 10,
            seed: int = 0, group_by_image: bool = False) -> ComparisonTable:
    """Cross-validate every (schema, classifier) pair on identical folds."""
    names = list(datasets)
    if not names or not specs:
        raise ValueError("compare needs at least one schema and one classifier")
    ref = datasets[names[0]]
    for name in names[1:]:
        if datasets[name].keys != ref.keys or not np.array_equal(datasets[name].y, ref.y):
            raise SchemaError(f"schema {name!r} describes a different segment set than {names[0]!r}")
    folds = (group_kfold(ref.image_ids, ref.y, k, seed) if group_by_image
             else stratified_kfold(ref.y, k, seed))
    rates = np.zeros((len(specs), len(names)))
    aucs = np.zeros_like(rates)
    reports = {}
    for i, spec in enumerate(specs):
        for j, name in enumerate(names):
            rep = cross_validate(spec, datasets[name], folds=folds)
            rates[i, j], aucs[i, j] = rep.recognition_rate, rep.auc
            reports[(spec.kind, name)] = rep
    return ComparisonTable(names, [s.kind for s in specs], rates, aucs, reports)
