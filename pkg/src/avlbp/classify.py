"""Single and ensemble classifiers for artery (1) versus vein (0).

Every model exposes an artery score in [0, 1]; the predicted class is
artery iff the score is at least 0.5.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import lbp
from .errors import ModelFileError, SchemaError
from .features import Dataset, schema_blocks
from .imaging import atomic_write_bytes

KINDS = ("naive_bayes", "cart", "random_tree", "random_forest", "bagging_cart",
         "majority_voting", "prototype_lbp")

_TREE_DEFAULTS = {"max_depth": 0, "min_leaf": 1}
DEFAULTS: dict[str, dict[str, Any]] = {
    "naive_bayes": {"var_floor": 1e-9},
    "cart": dict(_TREE_DEFAULTS),
    "random_tree": dict(_TREE_DEFAULTS, max_features="sqrt"),
    "random_forest": dict(_TREE_DEFAULTS, n_trees=100, max_features="sqrt"),
    "bagging_cart": dict(_TREE_DEFAULTS, n_trees=100),
    "majority_voting": {"members": ["naive_bayes", "cart", "random_tree"]},
    "prototype_lbp": {"blocks": None},
}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.hyperparameters) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"{self.kind}: unknown hyperparameter(s) {sorted(unknown)}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        hp = self.resolved()
        if "n_trees" in hp and int(hp["n_trees"]) < 1:
            raise ValueError("n_trees must be >= 1")
        if "min_leaf" in hp and int(hp["min_leaf"]) < 1:
            raise ValueError("min_leaf must be >= 1")
        if "max_depth" in hp and int(hp["max_depth"]) < 0:
            raise ValueError("max_depth must be >= 0 (0 = unlimited)")
        if "var_floor" in hp and not float(hp["var_floor"]) > 0:
            raise ValueError("var_floor must be positive")
        if "max_features" in hp:
            mf = hp["max_features"]
            if not (mf in ("sqrt", "all") or (isinstance(mf, int) and mf >= 1)):
                raise ValueError("max_features must be 'sqrt', 'all' or a positive integer")
        if self.kind == "majority_voting":
            members = hp["members"]
            if not members:
                raise ValueError("majority_voting needs at least one member")
            for m in members:
                member_spec(m, 0)

    def resolved(self) -> dict:
        return {**DEFAULTS[self.kind], **self.hyperparameters}

    def to_json(self) -> dict:
        return {"kind": self.kind, "hyperparameters": self.resolved(), "seed": int(self.seed)}

    @classmethod
    def from_json(cls, obj) -> "ClassifierSpec":
        return cls(obj["kind"], dict(obj.get("hyperparameters", {})), int(obj.get("seed", 0)))


def member_spec(member, seed: int) -> ClassifierSpec:
    if isinstance(member, str):
        spec = ClassifierSpec(member, {}, seed)
    else:
        spec = ClassifierSpec(member["kind"], dict(member.get("hyperparameters", {})), seed)
    if spec.kind == "majority_voting":
        raise ValueError("majority_voting members cannot themselves be majority_voting")
    return spec


@dataclass(frozen=True)
class Prediction:
    label: str
    artery_score: float


@dataclass
class TrainedModel:
    spec: ClassifierSpec
    schema_id: str
    n_features: int
    class_counts: dict
    params: dict

    def scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise SchemaError(f"model expects {self.n_features} features, got {X.shape[1]}")
        if not np.isfinite(X).all():
            raise ValueError("feature vector contains non-finite values")
        return _SCORERS[self.spec.kind](self.params, X)


# --- trees --------------------------------------------------------------

def _n_candidates(max_features, d: int) -> int:
    if max_features == "all":
        return d
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    return min(int(max_features), d)


def _best_split(X: np.ndarray, y: np.ndarray, feats: np.ndarray, min_leaf: int):
    """Lowest weighted Gini split over ``feats``; ties keep the earliest."""
    n = len(y)
    cols = X[:, feats]
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    ys = y[order].astype(np.float64)
    pos_left = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    p_l = pos_left / n_left
    p_r = (pos_left[-1:] + ys[-1:] - pos_left) / n_right
    impurity = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
    ok = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not ok.any():
        return None
    impurity = np.where(ok, impurity, np.inf)
    # column-major argmin: earliest feature first, then earliest position
    flat = int(np.argmin(impurity.T))
    j, i = divmod(flat, n - 1)
    lo, hi = xs[i, j], xs[i + 1, j]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr)


def _grow_tree(X, y, rng, max_features, max_depth: int, min_leaf: int) -> dict:
    d = X.shape[1]
    k = _n_candidates(max_features, d)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root_idx = np.arange(len(y))
    stack = [(new_node(root_idx), root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        yy = y[idx]
        if yy.min() == yy.max() or len(idx) < 2 * min_leaf or (max_depth and depth >= max_depth):
            continue
        Xn = X[idx]
        if k >= d:
            split = _best_split(Xn, yy, np.arange(d), min_leaf)
        else:
            perm = rng.permutation(d)
            split = _best_split(Xn, yy, perm[:k], min_leaf)
            # keep drawing features when none of the candidates separates the node
            start = k
            while split is None and start < d:
                split = _best_split(Xn, yy, perm[start:start + k], min_leaf)
                start += k
        if split is None:
            continue
        f, thr = split
        go_left = Xn[:, f] <= thr
        li, ri = new_node(idx[go_left]), new_node(idx[~go_left])
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))
    return {"feature": np.array(feature, dtype=np.int64), "threshold": np.array(threshold),
            "left": np.array(left, dtype=np.int64), "right": np.array(right, dtype=np.int64),
            "value": np.array(value)}


def _tree_values(tree: dict, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=np.int64)
    feature, threshold = tree["feature"], tree["threshold"]
    left, right = tree["left"], tree["right"]
    active = feature[node] >= 0
    rows = np.arange(len(X))
    while active.any():
        r = rows[active]
        n = node[r]
        go_left = X[r, feature[n]] <= threshold[n]
        node[r] = np.where(go_left, left[n], right[n])
        active = feature[node] >= 0
    return tree["value"][node]


# --- training -----------------------------------------------------------

def _tree_args(hp):
    return hp.get("max_features", "all"), int(hp["max_depth"]), int(hp["min_leaf"])


def _fit_single_tree(spec: ClassifierSpec, X, y) -> dict:
    hp = spec.resolved()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    return {"trees": [_grow_tree(X, y, rng, *_tree_args(hp))]}


def _fit_ensemble(spec: ClassifierSpec, X, y) -> dict:
    hp = spec.resolved()
    n = len(y)
    trees = []
    for child in np.random.SeedSequence(spec.seed).spawn(int(hp["n_trees"])):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, n)
        trees.append(_grow_tree(X[boot], y[boot], rng, *_tree_args(hp)))
    return {"trees": trees}


def _fit_naive_bayes(spec: ClassifierSpec, X, y) -> dict:
    floor = float(spec.resolved()["var_floor"])
    out = {}
    for cls in (0, 1):
        Xc = X[y == cls]
        out[f"mean{cls}"] = Xc.mean(axis=0)
        out[f"var{cls}"] = np.maximum(Xc.var(axis=0), floor)
        out[f"prior{cls}"] = len(Xc) / len(y)
    return out


def _fit_prototype(spec: ClassifierSpec, X, y, schema_id: str) -> dict:
    blocks = spec.resolved()["blocks"]
    if blocks is None:
        try:
            blocks = schema_blocks(schema_id)
        except (SchemaError, ValueError):
            blocks = [X.shape[1]]
    if sum(blocks) != X.shape[1]:
        raise SchemaError(f"prototype blocks {blocks} do not cover {X.shape[1]} features")
    # sorted column sums keep the prototype independent of sample order
    return {"blocks": [int(b) for b in blocks],
            "proto0": np.sort(X[y == 0], axis=0).sum(axis=0) / np.count_nonzero(y == 0),
            "proto1": np.sort(X[y == 1], axis=0).sum(axis=0) / np.count_nonzero(y == 1)}


def _fit_voting(spec: ClassifierSpec, X, y, schema_id: str) -> dict:
    members = spec.resolved()["members"]
    seeds = np.random.SeedSequence(spec.seed).generate_state(len(members), dtype=np.uint64)
    models = []
    for m, s in zip(members, seeds):
        mspec = member_spec(m, int(s))
        models.append({"spec": mspec.to_json(), "params": _fit_params(mspec, X, y, schema_id)})
    return {"members": models}


def _fit_params(spec: ClassifierSpec, X, y, schema_id: str) -> dict:
    kind = spec.kind
    if kind == "naive_bayes":
        return _fit_naive_bayes(spec, X, y)
    if kind in ("cart", "random_tree"):
        return _fit_single_tree(spec, X, y)
    if kind in ("random_forest", "bagging_cart"):
        return _fit_ensemble(spec, X, y)
    if kind == "prototype_lbp":
        return _fit_prototype(spec, X, y, schema_id)
    return _fit_voting(spec, X, y, schema_id)


def train(spec: ClassifierSpec, ds: Dataset) -> TrainedModel:
    """Fit ``spec`` on ``ds``; the result depends only on (spec, seed, data)."""
    y = np.asarray(ds.y, dtype=np.int64)
    counts = {"artery": int(np.count_nonzero(y == 1)), "vein": int(np.count_nonzero(y == 0))}
    if counts["artery"] == 0 or counts["vein"] == 0:
        raise ValueError(f"training data must contain both classes, got {counts}")
    params = _fit_params(spec, ds.X, y, ds.schema_id)
    return TrainedModel(spec, ds.schema_id, ds.n_features, counts, params)


# --- scoring ------------------------------------------------------------

def _score_nb(p, X):
    def loglik(cls):
        var = p[f"var{cls}"]
        ll = -0.5 * (np.log(2 * np.pi * var) + (X - p[f"mean{cls}"]) ** 2 / var)
        return ll.sum(axis=1) + math.log(p[f"prior{cls}"])

    diff = loglik(0) - loglik(1)
    # logistic of -diff without overflow
    return np.where(diff >= 0, np.exp(-np.clip(diff, 0, None)) / (1 + np.exp(-np.clip(diff, 0, None))),
                    1 / (1 + np.exp(np.clip(diff, None, 0))))


def _score_single_tree(p, X):
    return _tree_values(p["trees"][0], X)


def _score_ensemble(p, X):
    votes = np.zeros(len(X))
    for tree in p["trees"]:
        votes += _tree_values(tree, X) >= 0.5
    return votes / len(p["trees"])


def _score_prototype(p, X):
    bounds = np.cumsum([0] + p["blocks"])
    out = np.empty(len(X))
    for i, x in enumerate(X):
        pieces = [x[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        d_art = lbp.multiscale_dissimilarity(pieces, [p["proto1"][a:b] for a, b in zip(bounds[:-1], bounds[1:])])
        d_vein = lbp.multiscale_dissimilarity(pieces, [p["proto0"][a:b] for a, b in zip(bounds[:-1], bounds[1:])])
        total = d_art + d_vein
        out[i] = 0.5 if total == 0 else d_vein / total
    return out


def _score_voting(p, X):
    votes = np.zeros(len(X))
    for m in p["members"]:
        votes += _SCORERS[m["spec"]["kind"]](m["params"], X) >= 0.5
    return votes / len(p["members"])


_SCORERS = {
    "naive_bayes": _score_nb,
    "cart": _score_single_tree,
    "random_tree": _score_single_tree,
    "random_forest": _score_ensemble,
    "bagging_cart": _score_ensemble,
    "prototype_lbp": _score_prototype,
    "majority_voting": _score_voting,
}


def predict(model: TrainedModel, fv, schema_id: str | None = None) -> Prediction:
    if schema_id is not None and schema_id != model.schema_id:
        raise SchemaError(f"feature schema {schema_id!r} does not match model schema {model.schema_id!r}")
    score = float(model.scores(np.asarray(fv, dtype=np.float64).reshape(1, -1))[0])
    return Prediction("artery" if score >= 0.5 else "vein", score)


def predict_dataset(model: TrainedModel, ds: Dataset) -> np.ndarray:
    if ds.schema_id and ds.schema_id != model.schema_id:
        raise SchemaError(f"dataset schema {ds.schema_id!r} does not match model schema {model.schema_id!r}")
    return model.scores(ds.X)


# --- persistence --------------------------------------------------------

MAGIC = b"AVLBPMDL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHQ")


def _encode(obj):
    if isinstance(obj, np.ndarray):
        kind = "i" if obj.dtype.kind in "iu" else "f"
        return {"__array__": kind, "data": obj.tolist()}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["data"], dtype=np.int64 if obj["__array__"] == "i" else np.float64)
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def model_to_bytes(model: TrainedModel) -> bytes:
    doc = {
        "spec": model.spec.to_json(),
        "schema_id": model.schema_id,
        "n_features": model.n_features,
        "class_counts": model.class_counts,
        "params": _encode(model.params),
    }
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def model_from_bytes(data: bytes) -> TrainedModel:
    if len(data) < _HEADER.size:
        raise ModelFileError("model file truncated (incomplete header)")
    magic, version, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ModelFileError("not a model file (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version} (this build reads {FORMAT_VERSION})")
    end = _HEADER.size + length
    if len(data) != end + 4:
        raise ModelFileError("model file truncated or has trailing bytes")
    payload = data[_HEADER.size:end]
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(payload) != crc:
        raise ModelFileError("model file corrupt (checksum mismatch)")
    try:
        doc = json.loads(payload)
        return TrainedModel(ClassifierSpec.from_json(doc["spec"]), doc["schema_id"], int(doc["n_features"]),
                            doc["class_counts"], _decode(doc["params"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"model file corrupt: {exc}") from exc


def save_model(model: TrainedModel, path) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path) -> TrainedModel:
    return model_from_bytes(Path(path).read_bytes())
