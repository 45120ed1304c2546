"""Multiclass gradient-boosted decision trees, built from first principles.

Training minimizes softmax cross-entropy with second-order (gradient and
hessian) statistics. Each boosting round grows one regression tree per
class; leaf values are the regularized Newton step -G/(H+lambda), shrunk by
the learning rate before being stored, so prediction is a plain sum of leaf
values plus the base score followed by a softmax.

Split finding is exact greedy: candidate thresholds are midpoints between
consecutive distinct sorted feature values, scored by

    gain = 1/2 * [GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)] - gamma

A node splits on the best candidate whenever that gain is >= 0 and both
children carry at least ``min_child_weight`` hessian mass; zero-gain splits
are accepted so that patterns with no first-split margin (XOR-style) remain
learnable within the depth budget. Comparison is strict: x < threshold goes
left. Ties between candidates keep the lowest feature index, then the
lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ModelError(Exception):
    """Malformed or unusable model."""


class DataError(ValueError):
    """Input data violates the training/inference preconditions."""


class TrainingError(ValueError):
    """Label set or sizing makes training impossible."""


class ShapeError(ValueError):
    """Input vector has the wrong dimensionality."""


@dataclass(frozen=True)
class TrainParams:
    """Boosting hyperparameters. Defaults are conservative and desk-scale."""

    n_rounds: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    lambda_l2: float = 1.0
    gamma_min_gain: float = 0.0
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be >= 0")
        if self.lambda_l2 < 0:
            raise ValueError("lambda_l2 must be >= 0")
        if self.gamma_min_gain < 0:
            raise ValueError("gamma_min_gain must be >= 0")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainParams":
        return cls(**{k: obj[k] for k in obj})


@dataclass
class TreeNode:
    """Internal node (feature/threshold/children) or leaf (value)."""

    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_value: float = 0.0
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class GbdtModel:
    n_classes: int
    class_labels: tuple[str, ...]
    learning_rate: float
    base_score: float
    feature_count: int
    rounds: list[list[TreeNode]]
    loss_curve: list[float] | None = None
    has_split_gains: bool = True

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ModelError("a model needs at least 2 classes")
        if len(self.class_labels) != self.n_classes:
            raise ModelError("class_labels length must equal n_classes")
        for trees in self.rounds:
            if len(trees) != self.n_classes:
                raise ModelError("every round must hold one tree per class")


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    threshold: float
    gain: float


def find_best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray,
                    lambda_l2: float, gamma_min_gain: float,
                    min_child_weight: float) -> SplitDecision | None:
    """Exact greedy search over every (feature, midpoint) candidate.

    Operates on the rows of one node. Returns None when no candidate is
    valid or the best gain is negative. Deterministic tie-break: lowest
    feature index, then lowest threshold.
    """
    n, n_features = X.shape
    if n < 2:
        return None
    best: SplitDecision | None = None
    best_gain = -math.inf
    for f in range(n_features):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        if xs[0] == xs[-1]:
            continue
        gs = np.cumsum(g[order])
        hs = np.cumsum(h[order])
        g_total = gs[-1]
        h_total = hs[-1]
        parent = g_total * g_total / (h_total + lambda_l2)
        g_left = gs[:-1]
        h_left = hs[:-1]
        g_right = g_total - g_left
        h_right = h_total - h_left
        mids = (xs[:-1] + xs[1:]) / 2.0
        valid = (mids > xs[:-1]) & (h_left >= min_child_weight) & (h_right >= min_child_weight)
        if not valid.any():
            continue
        gains = 0.5 * (g_left * g_left / (h_left + lambda_l2)
                       + g_right * g_right / (h_right + lambda_l2)
                       - parent) - gamma_min_gain
        gains = np.where(valid, gains, -math.inf)
        idx = int(np.argmax(gains))
        if gains[idx] > best_gain:
            best_gain = float(gains[idx])
            best = SplitDecision(feature=f, threshold=float(mids[idx]), gain=best_gain)
    if best is None or best.gain < 0.0:
        return None
    return best


def _leaf_value(g_sum: float, h_sum: float, lambda_l2: float, shrinkage: float) -> float:
    denom = h_sum + lambda_l2
    if denom <= 0.0:
        return 0.0
    return -g_sum / denom * shrinkage


def _build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray,
                params: TrainParams) -> TreeNode:
    """Grow one depth-limited regression tree on (g, h) statistics."""

    def build(rows: np.ndarray, depth: int) -> TreeNode:
        g_sub = g[rows]
        h_sub = h[rows]
        decision = None
        if depth < params.max_depth and rows.size >= 2:
            decision = find_best_split(
                X[rows], g_sub, h_sub,
                params.lambda_l2, params.gamma_min_gain, params.min_child_weight,
            )
        if decision is None:
            value = _leaf_value(float(g_sub.sum()), float(h_sub.sum()),
                                params.lambda_l2, params.learning_rate)
            return TreeNode(leaf_value=value)
        mask = X[rows, decision.feature] < decision.threshold
        return TreeNode(
            feature=decision.feature,
            threshold=decision.threshold,
            left=build(rows[mask], depth + 1),
            right=build(rows[~mask], depth + 1),
            gain=decision.gain,
        )

    return build(np.arange(X.shape[0]), 0)


def _apply_tree(node: TreeNode, X: np.ndarray, rows: np.ndarray,
                out: np.ndarray) -> None:
    if node.is_leaf:
        out[rows] += node.leaf_value
        return
    mask = X[rows, node.feature] < node.threshold
    _apply_tree(node.left, X, rows[mask], out)  # type: ignore[arg-type]
    _apply_tree(node.right, X, rows[~mask], out)  # type: ignore[arg-type]


def _softmax(raw: np.ndarray) -> np.ndarray:
    shifted = raw - raw.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_loss(proba: np.ndarray, y_idx: np.ndarray) -> float:
    p_true = proba[np.arange(len(y_idx)), y_idx]
    return float(-np.mean(np.log(np.maximum(p_true, 1e-15))))


def train(X: np.ndarray, y: Sequence[str], params: TrainParams,
          class_labels: Sequence[str] | None = None) -> GbdtModel:
    """Fit a multiclass GBDT. Deterministic for a given seed.

    ``class_labels`` fixes the class-index order (and therefore the layout
    of probability vectors); when omitted it is the sorted label set. Every
    listed class must occur in ``y``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    if not np.isfinite(X).all():
        raise DataError("X contains non-finite values")
    y = list(y)
    if len(y) != X.shape[0]:
        raise DataError("X and y length mismatch")

    if class_labels is None:
        labels = tuple(sorted(set(y)))
    else:
        labels = tuple(class_labels)
    present = set(y)
    missing = [c for c in labels if c not in present]
    if missing:
        raise TrainingError(f"class absent from training labels: {missing[0]}")
    unknown = present.difference(labels)
    if unknown:
        raise TrainingError(f"label not in class list: {sorted(unknown)[0]}")
    n, n_features = X.shape
    n_classes = len(labels)
    if n_classes < 2:
        raise TrainingError("training needs at least 2 classes")
    if n < n_classes:
        raise TrainingError("need at least one row per class")

    label_index = {c: i for i, c in enumerate(labels)}
    y_idx = np.fromiter((label_index[label] for label in y), dtype=np.int64, count=n)
    one_hot = np.zeros((n, n_classes), dtype=np.float64)
    one_hot[np.arange(n), y_idx] = 1.0

    base_score = 0.0
    raw = np.full((n, n_classes), base_score, dtype=np.float64)
    rng = np.random.default_rng(params.seed)
    rounds: list[list[TreeNode]] = []
    loss_curve = [_log_loss(_softmax(raw), y_idx)]
    all_rows = np.arange(n)

    for _ in range(params.n_rounds):
        proba = _softmax(raw)
        if params.subsample < 1.0:
            picked = rng.random(n) < params.subsample
            rows = all_rows[picked] if picked.any() else all_rows
        else:
            rows = all_rows
        grad = proba - one_hot
        hess = proba * (1.0 - proba)
        trees: list[TreeNode] = []
        for k in range(n_classes):
            tree = _build_tree(X[rows], grad[rows, k], hess[rows, k], params)
            trees.append(tree)
            delta = np.zeros(n, dtype=np.float64)
            _apply_tree(tree, X, all_rows, delta)
            raw[:, k] += delta
        rounds.append(trees)
        loss_curve.append(_log_loss(_softmax(raw), y_idx))

    return GbdtModel(
        n_classes=n_classes,
        class_labels=labels,
        learning_rate=params.learning_rate,
        base_score=base_score,
        feature_count=n_features,
        rounds=rounds,
        loss_curve=loss_curve,
    )


def _score_one(model: GbdtModel, x: np.ndarray) -> np.ndarray:
    raw = np.full(model.n_classes, model.base_score, dtype=np.float64)
    for trees in model.rounds:
        for k, node in enumerate(trees):
            while not node.is_leaf:
                node = node.left if x[node.feature] < node.threshold else node.right  # type: ignore[assignment]
            raw[k] += node.leaf_value
    return raw


def _check_vector(model: GbdtModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.feature_count,):
        raise ShapeError(
            f"expected a vector of {model.feature_count} features, got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise DataError("input vector contains non-finite values")
    return x


def predict_proba(model: GbdtModel, x) -> np.ndarray:
    """Class probabilities (softmax over summed leaf scores), summing to 1."""
    x = _check_vector(model, x)
    return _softmax(_score_one(model, x))


def predict(model: GbdtModel, x) -> str:
    """Argmax class label; exact ties resolve to the lowest class index."""
    proba = predict_proba(model, x)
    return model.class_labels[int(np.argmax(proba))]


def predict_proba_many(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """Batch probabilities; rows of X are independent input vectors."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise ShapeError(f"expected shape (n, {model.feature_count}), got {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("X contains non-finite values")
    n = X.shape[0]
    raw = np.full((n, model.n_classes), model.base_score, dtype=np.float64)
    rows = np.arange(n)
    for trees in model.rounds:
        for k, tree in enumerate(trees):
            delta = np.zeros(n, dtype=np.float64)
            _apply_tree(tree, X, rows, delta)
            raw[:, k] += delta
    return _softmax(raw)


def predict_many(model: GbdtModel, X: np.ndarray) -> list[str]:
    proba = predict_proba_many(model, X)
    return [model.class_labels[i] for i in np.argmax(proba, axis=1)]


def feature_importance(model: GbdtModel) -> np.ndarray:
    """Total split gain per feature index. Requires an in-process trained model."""
    if not model.has_split_gains:
        raise ModelError("split gains are not serialized; importance needs a "
                         "model trained in this process")
    importance = np.zeros(model.feature_count, dtype=np.float64)

    def walk(node: TreeNode) -> None:
        if node.is_leaf:
            return
        importance[node.feature] += node.gain
        walk(node.left)  # type: ignore[arg-type]
        walk(node.right)  # type: ignore[arg-type]

    for trees in model.rounds:
        for tree in trees:
            walk(tree)
    return importance


# --------------------------------------------------------------------------
# Serialization: canonical JSON, floats at 17 significant digits
# --------------------------------------------------------------------------


def _fmt_float(value: float) -> str:
    if not math.isfinite(value):
        raise ModelError(f"non-finite value in model: {value}")
    return format(value, ".17g")


def _emit_tree(node: TreeNode, out: list[str]) -> None:
    if node.is_leaf:
        out.append('{"leaf":')
        out.append(_fmt_float(node.leaf_value))
        out.append("}")
        return
    out.append('{"feat":')
    out.append(str(node.feature))
    out.append(',"thr":')
    out.append(_fmt_float(node.threshold))
    out.append(',"left":')
    _emit_tree(node.left, out)  # type: ignore[arg-type]
    out.append(',"right":')
    _emit_tree(node.right, out)  # type: ignore[arg-type]
    out.append("}")


def dump_model(model: GbdtModel) -> str:
    """Canonical model JSON; identical models serialize to identical bytes."""
    out: list[str] = []
    out.append('{"n_classes":')
    out.append(str(model.n_classes))
    out.append(',"class_labels":')
    out.append(json.dumps(list(model.class_labels), separators=(",", ":")))
    out.append(',"learning_rate":')
    out.append(_fmt_float(model.learning_rate))
    out.append(',"base_score":')
    out.append(_fmt_float(model.base_score))
    out.append(',"feature_count":')
    out.append(str(model.feature_count))
    out.append(',"rounds":[')
    for r, trees in enumerate(model.rounds):
        if r:
            out.append(",")
        out.append("[")
        for k, tree in enumerate(trees):
            if k:
                out.append(",")
            _emit_tree(tree, out)
        out.append("]")
    out.append("]}")
    return "".join(out)


def save_model(model: GbdtModel, path: str | Path) -> None:
    Path(path).write_text(dump_model(model) + "\n", encoding="utf-8")


def _node_from_obj(obj: dict) -> TreeNode:
    if "leaf" in obj:
        return TreeNode(leaf_value=float(obj["leaf"]))
    return TreeNode(
        feature=int(obj["feat"]),
        threshold=float(obj["thr"]),
        left=_node_from_obj(obj["left"]),
        right=_node_from_obj(obj["right"]),
    )


def loads_model(text: str) -> GbdtModel:
    try:
        obj = json.loads(text)
        rounds = [[_node_from_obj(t) for t in trees] for trees in obj["rounds"]]
        return GbdtModel(
            n_classes=int(obj["n_classes"]),
            class_labels=tuple(obj["class_labels"]),
            learning_rate=float(obj["learning_rate"]),
            base_score=float(obj["base_score"]),
            feature_count=int(obj["feature_count"]),
            rounds=rounds,
            has_split_gains=False,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model file: {exc}") from exc


def load_model(path: str | Path) -> GbdtModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))
