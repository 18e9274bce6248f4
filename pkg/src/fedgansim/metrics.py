"""Fidelity (kernel MMD), detection precision/recall, and synthetic-data utility."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import cgan, nn
from .errors import ValidationError


def _as_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :]
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


def median_bandwidth(*sets) -> float:
    """Median pairwise Euclidean distance over the pooled sets."""
    pooled = np.vstack([_as_rows(s) for s in sets])
    if len(pooled) < 2:
        raise ValidationError("median bandwidth needs at least two points")
    d = pdist(pooled)
    return float(np.median(d))


def mmd2(set_a, set_b, bandwidth: Union[float, str] = "median") -> float:
    """Biased Gaussian-kernel MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 bw^2))."""
    a, b = _as_rows(set_a), _as_rows(set_b)
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("both sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    bw = median_bandwidth(a, b) if bandwidth == "median" else float(bandwidth)
    if not bw > 0:
        raise ValidationError(f"bandwidth must be positive, got {bw}")
    gamma = 1.0 / (2.0 * bw * bw)
    kaa = np.exp(-gamma * cdist(a, a, "sqeuclidean")).mean()
    kbb = np.exp(-gamma * cdist(b, b, "sqeuclidean")).mean()
    kab = np.exp(-gamma * cdist(a, b, "sqeuclidean")).mean()
    return max(float(kaa + kbb - 2.0 * kab), 0.0)


@dataclass(frozen=True)
class FidelityReport:
    per_class: dict
    pooled: float
    bandwidth: float


def sample_generator(model: cgan.CganModel, per_class: int, seed: int):
    """``per_class`` synthetic images of every class, class-major order."""
    rng = np.random.default_rng([seed, 0x6E7])
    labels = np.repeat(np.arange(model.num_classes), per_class)
    z = cgan.sample_noise(rng, len(labels), model.noise_dim)
    if len(labels) == 0:
        return np.zeros((0, model.image_dim)), labels
    return cgan.generate(model, z, labels), labels


def fidelity(synth_x, synth_y, real_x, real_y,
             bandwidth: Union[float, str] = "median") -> FidelityReport:
    """Pooled and per-class MMD^2 between synthetic and real images.

    A "median" bandwidth is taken from the real set alone so that several
    synthetic sets can be compared on the same kernel.
    """
    synth_x, real_x = _as_rows(synth_x), _as_rows(real_x)
    if synth_x.shape[1] != real_x.shape[1]:
        raise ValidationError(
            f"image geometry mismatch: {synth_x.shape[1]} vs {real_x.shape[1]} values")
    bw = median_bandwidth(real_x) if bandwidth == "median" else float(bandwidth)
    synth_y, real_y = np.asarray(synth_y), np.asarray(real_y)
    per_class = {
        int(c): mmd2(synth_x[synth_y == c], real_x[real_y == c], bw)
        for c in np.unique(real_y) if np.any(synth_y == c)
    }
    return FidelityReport(per_class, mmd2(synth_x, real_x, bw), bw)


def noise_baseline(real_x, bandwidth: Union[float, str] = "median", seed: int = 0) -> float:
    """MMD^2 between uniform noise in [-1, 1] and the real set."""
    real_x = _as_rows(real_x)
    bw = median_bandwidth(real_x) if bandwidth == "median" else float(bandwidth)
    noise = np.random.default_rng([seed, 0x401]).uniform(-1.0, 1.0, size=real_x.shape)
    return mmd2(noise, real_x, bw)


@dataclass(frozen=True)
class DetectionReport:
    flags: dict  # round -> sorted flagged client ids
    precision: float
    recall: float
    true_positives: int
    false_positives: int
    false_negatives: int
    final_weights: dict  # malicious client id -> last normalized weight


def detection_metrics(records, true_malicious, warmup: int = 10) -> DetectionReport:
    """Per-(round, client) precision and recall over rounds after the warmup.

    With no flags at all precision is reported as 1.0.
    """
    true_malicious = set(true_malicious)
    flags: dict = {}
    tp = fp = fn = 0
    last_weight: dict = {}
    for r in records:
        flags.setdefault(r.round, [])
        if r.client_id in true_malicious:
            last_weight[r.client_id] = r.weight_after
        if r.round <= warmup:
            continue
        if r.flagged:
            flags[r.round].append(r.client_id)
            if r.client_id in true_malicious:
                tp += 1
            else:
                fp += 1
        elif r.client_id in true_malicious:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return DetectionReport({t: sorted(v) for t, v in flags.items()}, precision, recall,
                           tp, fp, fn, last_weight)


@dataclass(frozen=True)
class UtilityRow:
    real_per_class: int
    seed: int
    real_only: float
    augmented: float


@dataclass
class UtilityReport:
    rows: list = field(default_factory=list)

    def summary(self, real_per_class: int, arm: str) -> tuple[float, float]:
        vals = [getattr(r, arm) for r in self.rows if r.real_per_class == real_per_class]
        return float(np.mean(vals)), float(np.std(vals))


CLASSIFIER_HIDDEN = 64
CLASSIFIER_EPOCHS = 20
CLASSIFIER_LR = 1e-3


def train_classifier(x: np.ndarray, y: np.ndarray, num_classes: int, seed: int,
                     epochs: int = CLASSIFIER_EPOCHS, batch_size: int = 32) -> nn.ModelParams:
    """Softmax classifier with one hidden layer, trained with Adam."""
    spec = classifier_spec(x.shape[1], num_classes)
    rng = np.random.default_rng([seed, 0xC1A])
    params = nn.init_params(spec, int(rng.integers(2 ** 32)))
    state = nn.AdamState.fresh(params, CLASSIFIER_LR)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            logits, trace = nn.forward_trace(params, spec, x[idx])
            logits = logits - logits.max(axis=1, keepdims=True)
            prob = np.exp(logits)
            prob /= prob.sum(axis=1, keepdims=True)
            prob[np.arange(len(idx)), y[idx]] -= 1.0
            grads, _ = nn.backward(params, spec, x[idx], prob / len(idx), trace)
            params, state = nn.adam_step(params, grads, state)
    return params


def classifier_spec(in_dim: int, num_classes: int) -> list[nn.DenseLayerSpec]:
    return nn.mlp_spec([in_dim, CLASSIFIER_HIDDEN, num_classes])


def accuracy(params: nn.ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    w0, w1 = params[nn.weight_name(0)], params[nn.weight_name(1)]
    pred = nn.forward(params, classifier_spec(w0.shape[0], w1.shape[1]), x).argmax(axis=1)
    return float(np.mean(pred == y))


def utility_study(real_x, real_y, synth_x, synth_y, test_x, test_y,
                  real_per_class: Sequence[int], synth_per_class: int,
                  seeds: Sequence[int]) -> UtilityReport:
    """Classifier accuracy trained on real-only vs real plus synthetic images.

    For every (count, seed) both arms share the real subset, the
    initialization and the shuffling stream.
    """
    real_x, synth_x, test_x = _as_rows(real_x), _as_rows(synth_x), _as_rows(test_x)
    real_y, synth_y, test_y = (np.asarray(a, dtype=np.int64) for a in (real_y, synth_y, test_y))
    classes = np.unique(test_y)
    counts = [np.sum(test_y == c) for c in classes]
    if len(set(counts)) != 1:
        raise ValidationError(f"test set is not balanced: {dict(zip(classes.tolist(), counts))}")
    num_classes = int(max(real_y.max(), test_y.max())) + 1
    report = UtilityReport()
    for n_real in real_per_class:
        for seed in seeds:
            rng = np.random.default_rng([seed, n_real])
            real_idx = _pick_per_class(real_y, classes, n_real, rng, "real")
            synth_idx = _pick_per_class(synth_y, classes, synth_per_class, rng, "synthetic")
            xr, yr = real_x[real_idx], real_y[real_idx]
            xa = np.vstack([xr, synth_x[synth_idx]]) if len(synth_idx) else xr
            ya = np.concatenate([yr, synth_y[synth_idx]])
            acc_real = accuracy(train_classifier(xr, yr, num_classes, seed), test_x, test_y)
            acc_aug = accuracy(train_classifier(xa, ya, num_classes, seed), test_x, test_y)
            report.rows.append(UtilityRow(n_real, seed, acc_real, acc_aug))
    return report


def _pick_per_class(y, classes, per_class, rng, what):
    picked = []
    for c in classes:
        idx = np.flatnonzero(y == c)
        if len(idx) < per_class:
            raise ValidationError(
                f"{what} class {c} has {len(idx)} images, {per_class} requested")
        picked.append(rng.choice(idx, size=per_class, replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)
