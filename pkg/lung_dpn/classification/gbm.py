# -*- coding: utf-8 -*-
"""Gradient boosting with logistic loss over fused nodule features."""

import logging
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit

from ..config.settings import GbmConfig
from ..errors import CheckpointError, DataError, DimensionError

logger = logging.getLogger(__name__)

MAGIC = b"GBM1"
VERSION = 1
LEAF, SPLIT = 0, 1
EPS = 1e-12


@dataclass
class TreeNode:
    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth, self.right.depth)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Leaf values for (N, F) rows; x <= threshold goes left."""
        out = np.empty(len(x))
        self._fill(x, np.arange(len(x)), out)
        return out

    def _fill(self, x: np.ndarray, rows: np.ndarray, out: np.ndarray):
        if self.is_leaf:
            out[rows] = self.value
            return
        go_left = x[rows, self.feature] <= self.threshold
        self.left._fill(x, rows[go_left], out)
        self.right._fill(x, rows[~go_left], out)


@dataclass
class GbmModel:
    """sigmoid(initial + shrinkage · Σ trees)."""

    initial: float
    shrinkage: float
    n_features: int
    trees: List[TreeNode] = field(default_factory=list)
    loss_curve: List[float] = field(default_factory=list)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionError(
                f"model expects {self.n_features} features, got shape {x.shape}"
            )
        score = np.full(len(x), self.initial)
        for tree in self.trees:
            score += self.shrinkage * tree.predict(x)
        return score


def log_loss(scores: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss of raw scores."""
    return float(np.mean(np.logaddexp(0.0, scores) - y * scores))


def best_split(x: np.ndarray, residual: np.ndarray, min_samples_leaf: int):
    """Exact greedy variance-reduction split over every column at once.

    Returns:
        (feature, threshold, gain), or None when no split reduces variance.
        Ties go to the lowest feature, then the lowest threshold.
    """
    n, f = x.shape
    if n < 2 * min_samples_leaf or n < 2:
        return None
    order = np.argsort(x, axis=0, kind="stable")
    values = np.take_along_axis(x, order, axis=0)
    sums = np.cumsum(residual[order], axis=0)[:-1]  # left sums per cut (n-1, F)
    total = residual.sum()
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    gain = sums**2 / n_left + (total - sums) ** 2 / n_right - total**2 / n

    valid = values[1:] > values[:-1]
    valid &= (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.reshape(-1)  # feature-major
    k = int(np.argmax(flat))
    if not np.isfinite(flat[k]) or flat[k] <= EPS:
        return None
    feature, cut = divmod(k, n - 1)
    threshold = 0.5 * (values[cut, feature] + values[cut + 1, feature])
    return feature, float(threshold), float(flat[k])


def _grow(
    x: np.ndarray,
    residual: np.ndarray,
    hessian: np.ndarray,
    depth: int,
    config: GbmConfig,
) -> TreeNode:
    leaf = TreeNode(value=float(residual.sum() / (hessian.sum() + EPS)))
    if depth >= config.max_depth:
        return leaf
    split = best_split(x, residual, config.min_samples_leaf)
    if split is None:
        return leaf
    feature, threshold, _ = split
    left = x[:, feature] <= threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        left=_grow(x[left], residual[left], hessian[left], depth + 1, config),
        right=_grow(x[~left], residual[~left], hessian[~left], depth + 1, config),
    )


def fit_tree(
    x: np.ndarray, residual: np.ndarray, hessian: np.ndarray, config: GbmConfig
) -> TreeNode:
    """One regression tree on the negative gradient with Newton leaf values.

    A root that cannot be split contributes 0.
    """
    tree = _grow(x, residual, hessian, 0, config)
    if tree.is_leaf:
        tree.value = 0.0
    return tree


def gbm_fit(
    features: np.ndarray, labels: Sequence[float], config: Optional[GbmConfig] = None, **overrides
) -> GbmModel:
    """Boost ``n_trees`` trees on the logistic loss.

    Args:
        features: (N, F) dense finite features
        labels: (N,) binary labels
        config: Hyperparameters (n_trees, max_depth, shrinkage, subsample, seed)
        **overrides: Individual hyperparameters replacing config values

    Returns:
        GbmModel with the per-iteration training loss in ``loss_curve``

    Raises:
        DataError: Single-class labels or non-finite features
    """
    config = replace(config or GbmConfig(), **overrides)
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionError(f"features {x.shape} do not match {len(y)} labels")
    if not np.all(np.isfinite(x)):
        raise DataError("GBM features must be finite")
    pos, neg = int(np.sum(y == 1)), int(np.sum(y == 0))
    if pos == 0 or neg == 0:
        raise DataError(f"GBM needs both classes, got {pos} positive / {neg} negative")

    model = GbmModel(float(np.log(pos / neg)), config.shrinkage, x.shape[1])
    rng = np.random.default_rng(config.seed)
    scores = np.full(len(y), model.initial)
    model.loss_curve.append(log_loss(scores, y))
    n_rows = max(1, int(round(config.subsample * len(y))))
    for _ in range(config.n_trees):
        p = expit(scores)
        residual, hessian = y - p, p * (1.0 - p)
        rows = np.arange(len(y))
        if n_rows < len(y):
            rows = np.sort(rng.choice(len(y), size=n_rows, replace=False))
        tree = fit_tree(x[rows], residual[rows], hessian[rows], config)
        model.trees.append(tree)
        scores = scores + config.shrinkage * tree.predict(x)
        model.loss_curve.append(log_loss(scores, y))
    logger.debug(
        f"GBM: {config.n_trees} trees, loss {model.loss_curve[0]:.4f} → {model.loss_curve[-1]:.4f}"
    )
    return model


def gbm_predict_batch(model: GbmModel, features: np.ndarray) -> np.ndarray:
    return expit(model.decision_function(np.atleast_2d(features)))


def gbm_predict(model: GbmModel, feature: Sequence[float]) -> float:
    """Malignancy probability of one feature vector."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 1:
        raise DimensionError(f"expected one feature vector, got shape {feature.shape}")
    return float(gbm_predict_batch(model, feature[None])[0])


def _write_tree(f: BinaryIO, node: TreeNode):
    if node.is_leaf:
        f.write(struct.pack("<Bd", LEAF, node.value))
        return
    f.write(struct.pack("<BQd", SPLIT, node.feature, node.threshold))
    _write_tree(f, node.left)
    _write_tree(f, node.right)


def save_gbm(path: str, model: GbmModel):
    """GBM1 file: header, then every tree in pre-order."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQddQ", VERSION, model.n_features, model.initial, model.shrinkage, len(model.trees)))
        for tree in model.trees:
            _write_tree(f, tree)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def read(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise CheckpointError("GBM model file is truncated")
        values = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return values


def _read_tree(reader: _Reader) -> TreeNode:
    (tag,) = reader.read("<B")
    if tag == LEAF:
        return TreeNode(value=reader.read("<d")[0])
    if tag != SPLIT:
        raise CheckpointError(f"unknown GBM node tag {tag}")
    feature, threshold = reader.read("<Qd")
    left = _read_tree(reader)
    right = _read_tree(reader)
    return TreeNode(feature=int(feature), threshold=threshold, left=left, right=right)


def load_gbm(path: str) -> GbmModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read GBM model {path}: {e.strerror or e}") from e
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a GBM1 model")
    reader = _Reader(blob)
    reader.pos = 4
    version, n_features, initial, shrinkage, n_trees = reader.read("<IQddQ")
    if version != VERSION:
        raise CheckpointError(f"unsupported GBM1 version {version}")
    trees = [_read_tree(reader) for _ in range(n_trees)]
    return GbmModel(initial, shrinkage, int(n_features), trees)


FEATURE_SETS = ("size_pixels", "all")


def feature_columns(kind: str, deep_dim: int, n_features: int) -> np.ndarray:
    """Column indices of an ablation feature set within the fused layout."""
    if kind == "all":
        return np.arange(n_features)
    if kind == "size_pixels":
        return np.arange(deep_dim, n_features)
    raise DataError(f"Unknown feature set: {kind}")


def ablation_study(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    deep_dim: int,
    config: Optional[GbmConfig] = None,
) -> Dict[str, float]:
    """Held-out accuracy of GBMs on size+pixels only versus all fused features."""
    results = {}
    for kind in FEATURE_SETS:
        columns = feature_columns(kind, deep_dim, train_x.shape[1])
        model = gbm_fit(train_x[:, columns], train_y, config)
        preds = gbm_predict_batch(model, test_x[:, columns])
        results[kind] = float(np.mean((preds > 0.5) == (np.asarray(test_y) > 0.5)))
        logger.info(f"GBM on {kind}: held-out accuracy {results[kind]:.3f}")
    return results
