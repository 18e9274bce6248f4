"""Loss-based malicious-client detection with adaptive aggregation weights.

Each round after a warmup, the server fits an isolation forest on the N
scalar generator losses it received. Clients whose anomaly score exceeds a
threshold are flagged, provided fewer than half of the clients are flagged.
A flagged client's counter ``c_i`` is incremented and its weight is
multiplied by ``decay ** c_i``; weights are then renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    subsample_size: Optional[int] = None  # None -> min(n, 256)
    score_threshold: float = 0.6

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be positive")
        if self.subsample_size is not None and self.subsample_size < 2:
            raise ValidationError("subsample_size must be >= 2")
        if not 0.5 < self.score_threshold < 1.0:
            raise ValidationError("score_threshold must lie in (0.5, 1)")


@dataclass(frozen=True)
class Leaf:
    count: int


@dataclass(frozen=True)
class Node:
    split: float
    left: "Tree"
    right: "Tree"


Tree = Union[Leaf, Node]


def harmonic(n: int) -> float:
    return math.fsum(1.0 / k for k in range(1, n + 1))


def average_path(n: int) -> float:
    """C(n) = 2 H(n-1) - 2 (n-1) / n, the mean unsuccessful-search depth of a BST."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


def height_limit(n: int) -> int:
    return math.ceil(math.log2(max(n, 1))) + 2


def build_tree(values: Sequence[float], rng: np.random.Generator,
               max_depth: Optional[int] = None, leaf_size: int = 1, _depth: int = 0) -> Tree:
    """Isolation tree grown by uniform random splits inside (min, max).

    Stops at ``leaf_size`` values, at ``max_depth``, or when all values are
    equal (no split point exists).
    """
    values = np.asarray(values, dtype=np.float64)
    if _depth == 0 and values.size == 0:
        raise ValidationError("cannot build a tree on no values")
    if max_depth is None:
        max_depth = height_limit(values.size)
    lo, hi = values.min(), values.max()
    if values.size <= leaf_size or _depth >= max_depth or not lo < hi:
        return Leaf(int(values.size))
    split = rng.uniform(lo, hi)
    while not lo < split < hi:
        split = rng.uniform(lo, hi)
    mask = values < split
    return Node(float(split),
                build_tree(values[mask], rng, max_depth, leaf_size, _depth + 1),
                build_tree(values[~mask], rng, max_depth, leaf_size, _depth + 1))


def path_length(tree: Tree, value: float) -> float:
    """Edges to the landing leaf plus C(leaf count)."""
    edges = 0
    while isinstance(tree, Node):
        tree = tree.left if value < tree.split else tree.right
        edges += 1
    return edges + average_path(tree.count)


def anomaly_scores(values: Sequence[float], params: ForestParams = ForestParams(),
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Score 2 ** (-E[h] / C(phi)) for every value; higher is more isolated."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValidationError("need at least two values to score")
    if rng is None:
        rng = np.random.default_rng(0)
    phi = params.subsample_size or min(values.size, 256)
    phi = min(phi, values.size)
    depth = height_limit(phi)
    total = np.zeros(values.size)
    for _ in range(params.n_trees):
        sample = values if phi == values.size else rng.choice(values, size=phi, replace=False)
        tree = build_tree(sample, rng, depth)
        total += [path_length(tree, v) for v in values]
    mean_h = total / params.n_trees
    return np.power(2.0, -mean_h / average_path(phi))


@dataclass
class DetectionState:
    weights: np.ndarray
    flag_counts: np.ndarray
    warmup: int = 10
    decay: float = 0.9

    @classmethod
    def initial(cls, n_clients: int, warmup: int = 10, decay: float = 0.9) -> "DetectionState":
        if not 0.0 < decay < 1.0:
            raise ValidationError(f"decay must lie in (0, 1), got {decay}")
        if warmup < 0:
            raise ValidationError(f"warmup must be nonnegative, got {warmup}")
        return cls(np.full(n_clients, 1.0 / n_clients), np.zeros(n_clients, dtype=np.int64),
                   warmup, decay)


@dataclass(frozen=True)
class DetectionOutcome:
    flagged: frozenset
    scores: Optional[np.ndarray]  # None during warmup
    outliers: frozenset = field(default_factory=frozenset)  # before the validity gate


def round_rng(seed: int, t: int) -> np.random.Generator:
    """Forest randomness for round ``t``; shared by live runs and offline replay."""
    return np.random.default_rng([seed, 0xFED, t])


def decay_weights(state: DetectionState, flagged) -> DetectionState:
    """Increment counters of ``flagged`` clients, decay their weights, renormalize."""
    w = state.weights.copy()
    c = state.flag_counts.copy()
    for i in sorted(flagged):
        c[i] += 1
        w[i] = w[i] * state.decay ** c[i]
    return replace(state, weights=w / w.sum(), flag_counts=c)


def detect_round(state: DetectionState, losses: Sequence[float], params: ForestParams,
                 t: int, seed: int = 0) -> tuple[DetectionState, DetectionOutcome]:
    """Run one round of detection on the per-client losses of round ``t``."""
    losses = np.asarray(losses, dtype=np.float64)
    n = state.weights.size
    if losses.shape != (n,):
        raise ValidationError(f"expected {n} losses, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise ValidationError("losses must be finite")
    if t <= state.warmup:
        return replace(state), DetectionOutcome(frozenset(), None)
    scores = anomaly_scores(losses, params, round_rng(seed, t))
    outliers = frozenset(int(i) for i in np.flatnonzero(scores > params.score_threshold))
    flagged = outliers if 0 < len(outliers) < n / 2 else frozenset()
    return decay_weights(state, flagged), DetectionOutcome(flagged, scores, outliers)
