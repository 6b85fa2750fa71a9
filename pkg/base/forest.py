"""
Random-forest baseline over hand-crafted features.

Each tree is a scikit-learn CART grown on its own bootstrap resample with its
own RNG stream; prediction is a majority vote, ties going to the smallest
class id.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from sklearn.tree import DecisionTreeClassifier

from base.errors import LabelError, ShapeError
from base.features import FEATURE_COUNT, FeatureVector
from base.rng import spawn
from config.settings import HAR_THREADS

logger = logging.getLogger(__name__)


class ForestConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_trees: int = Field(100, ge=1)
    max_features: int = Field(math.ceil(math.sqrt(FEATURE_COUNT)), ge=1)
    min_leaf: int = Field(1, ge=1)
    bootstrap: bool = True


@dataclass
class ForestModel:
    trees: List[DecisionTreeClassifier]
    n_classes: int
    feature_count: int = FEATURE_COUNT
    # in_bag[t, i] is True when row i was drawn for tree t
    in_bag: Optional[np.ndarray] = field(default=None, repr=False)


def _as_matrix(X) -> np.ndarray:
    if len(X) and isinstance(X[0], FeatureVector):
        return np.vstack([x.to_array() for x in X])
    return np.asarray(X, dtype=np.float64)


def _grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng: np.random.Generator):
    n = len(y)
    if cfg.bootstrap:
        rows = rng.integers(0, n, size=n)
    else:
        rows = np.arange(n)
    tree = DecisionTreeClassifier(
        criterion="gini",
        max_features=min(cfg.max_features, X.shape[1]),
        min_samples_leaf=cfg.min_leaf,
        random_state=int(rng.integers(0, 2**31 - 1)),
    )
    tree.fit(X[rows], y[rows])
    in_bag = np.zeros(n, dtype=bool)
    in_bag[rows] = True
    return tree, in_bag


def train_forest(
    X: Sequence,
    y: Sequence[int],
    cfg: ForestConfig = ForestConfig(),
    rng: Optional[np.random.Generator] = None,
) -> ForestModel:
    """
    Grow cfg.n_trees Gini trees on bootstrap resamples.

    Args:
        X: FeatureVectors or a (n, d) matrix
        y: Non-negative class ids
        cfg: Forest hyperparameters
        rng: Generator; every tree gets an independent child stream

    Returns:
        ForestModel

    Raises:
        ShapeError: If X and y lengths differ
        LabelError: On fewer than 2 rows or fewer than 2 classes
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError(f"train_forest: X has shape {X.shape} but {len(y)} labels")
    if len(y) < 2:
        raise LabelError(f"train_forest needs at least 2 rows, got {len(y)}")
    if (y < 0).any():
        raise LabelError("train_forest: class ids must be non-negative")
    if len(np.unique(y)) < 2:
        raise LabelError(f"train_forest needs at least 2 classes, got only {np.unique(y).tolist()}")
    rng = rng if rng is not None else np.random.default_rng(0)

    streams = spawn(rng, cfg.n_trees)
    grown = Parallel(n_jobs=HAR_THREADS)(
        delayed(_grow_tree)(X, y, cfg, stream) for stream in streams
    )
    trees = [tree for tree, _ in grown]
    in_bag = np.vstack([bag for _, bag in grown])
    logger.info(f"Trained forest of {len(trees)} trees on {len(y)} rows, {X.shape[1]} features")
    return ForestModel(trees=trees, n_classes=int(y.max()) + 1, feature_count=X.shape[1], in_bag=in_bag)


def _tree_votes(m: ForestModel, X: np.ndarray) -> np.ndarray:
    """(n_trees, n) matrix of per-tree class ids"""
    return np.vstack([tree.predict(X).astype(np.int64) for tree in m.trees])


def _majority(votes: np.ndarray, n_classes: int, weights: Optional[np.ndarray] = None):
    n = votes.shape[1]
    counts = np.zeros((n, n_classes))
    w = np.ones_like(votes, dtype=np.float64) if weights is None else weights
    for t in range(votes.shape[0]):
        np.add.at(counts, (np.arange(n), votes[t]), w[t])
    # argmax returns the first maximum, i.e. the smallest class id
    return counts.argmax(axis=1), counts


def forest_predict(m: ForestModel, X: Sequence) -> np.ndarray:
    X = _as_matrix(X)
    if X.ndim != 2 or X.shape[1] != m.feature_count:
        raise ShapeError(f"forest_predict: expected {m.feature_count} features, got shape {X.shape}")
    predictions, _ = _majority(_tree_votes(m, X), m.n_classes)
    return predictions


def forest_oob_accuracy(m: ForestModel, X: Sequence, y: Sequence[int]) -> float:
    """
    Out-of-bag accuracy: each training row is voted on only by trees whose
    bootstrap sample excluded it. Rows drawn by every tree are skipped.
    """
    if m.in_bag is None:
        raise ValueError("forest_oob_accuracy needs a model trained with train_forest")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if m.in_bag.shape[1] != len(y):
        raise ShapeError(f"forest_oob_accuracy: model was trained on {m.in_bag.shape[1]} rows, got {len(y)}")
    out_of_bag = ~m.in_bag
    predictions, _ = _majority(_tree_votes(m, X), m.n_classes, weights=out_of_bag.astype(np.float64))
    scored = out_of_bag.any(axis=0)
    if not scored.any():
        raise ValueError("forest_oob_accuracy: every row is in-bag for every tree")
    return float(np.mean(predictions[scored] == y[scored]))
