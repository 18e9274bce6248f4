"""Baseline defenses: input augmentation, model reconstruction, sign-vote aggregation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import cgan, nn
from .errors import ValidationError
from .nn import ModelParams

FILL = -1.0  # byte 0 after normalization


@dataclass(frozen=True)
class AugmentationSpec:
    horizontal_flip: bool = True
    flip_prob: float = 0.5
    rotation: Optional[tuple[float, float]] = (-90.0, 90.0)


@dataclass(frozen=True)
class ReconstructionSpec:
    clean_samples_per_class: int = 500
    epochs: int = 200
    learning_rate: float = cgan.GAN_LR
    batch_size: int = 32


@dataclass(frozen=True)
class RobustAggSpec:
    threshold: Optional[int] = None  # None -> n_clients - 1
    server_lr: float = 1.0


def hflip(img: np.ndarray) -> np.ndarray:
    """Mirror an (h, w, c) image left-right."""
    return img[:, ::-1, :].copy()


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Nearest-neighbour rotation about the image centre; uncovered pixels are FILL."""
    h, w, _ = img.shape
    if degrees == 0.0:
        return img.copy()
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    cos, sin = np.cos(theta), np.sin(theta)
    # inverse map: output pixel -> source pixel
    src_x = np.rint(cos * xx + sin * yy + cx).astype(np.int64)
    src_y = np.rint(-sin * xx + cos * yy + cy).astype(np.int64)
    valid = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    out = np.full_like(img, FILL)
    out[valid] = img[src_y[valid], src_x[valid]]
    return out


def augment(batch: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """Independent random flip and rotation of every image in an (n, h, w, c) batch.

    Equivalent to applying :func:`hflip` and :func:`rotate` image by image,
    with the flip coin drawn before the angle for each image in turn.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != batch.shape[2]:
        raise ValidationError(f"expected a batch of square images, got shape {batch.shape}")
    n = len(batch)
    flips = np.zeros(n, dtype=bool)
    angles = np.zeros(n)
    for k in range(n):
        if spec.horizontal_flip:
            flips[k] = rng.random() < spec.flip_prob
        if spec.rotation is not None:
            angles[k] = rng.uniform(*spec.rotation)
    out = np.where(flips[:, None, None, None], batch[:, :, ::-1, :], batch)
    if spec.rotation is None:
        return out
    return _rotate_batch(out, angles)


def _rotate_batch(batch: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rotate` with one angle per image."""
    n, h, w, _ = batch.shape
    theta = np.deg2rad(degrees)[:, None, None]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    cos, sin = np.cos(theta), np.sin(theta)
    src_x = np.rint(cos * xx + sin * yy + cx).astype(np.int64)
    src_y = np.rint(-sin * xx + cos * yy + cy).astype(np.int64)
    valid = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    # zero angles copy exactly, as in rotate()
    still = degrees == 0.0
    grid_y, grid_x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src_x[still], src_y[still], valid[still] = grid_x, grid_y, True
    k = np.broadcast_to(np.arange(n)[:, None, None], valid.shape)
    out = np.full_like(batch, FILL)
    out[valid] = batch[k[valid], src_y[valid], src_x[valid]]
    return out


def flat_augmenter(spec: AugmentationSpec, image_shape: tuple[int, int, int]):
    """Adapter for :func:`cgan.local_train`, which works on flattened rows."""
    def apply(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        imgs = rows.reshape((len(rows),) + tuple(image_shape))
        return augment(imgs, spec, rng).reshape(len(rows), -1)
    return apply


def reconstruct(model: cgan.CganModel, clean_x: np.ndarray, clean_y: np.ndarray,
                spec: ReconstructionSpec, seed: int) -> ModelParams:
    """Fine-tune ``model.generator_params`` on clean data against a fresh discriminator.

    ``model`` is a server-side copy; only its generator is read.
    """
    clean_x = np.asarray(clean_x, dtype=np.float64)
    if len(clean_x) == 0:
        raise ValidationError("reconstruction needs a nonempty clean corpus")
    if spec.epochs == 0:
        return nn.copy_params(model.generator_params)
    rng = np.random.default_rng([seed, 0x5EC])
    fresh_d = nn.init_params(model.discriminator_spec, int(rng.integers(2 ** 32)))
    work = replace(model, discriminator_params=fresh_d)
    states = cgan.fresh_optimizers(work, spec.learning_rate)
    batch = min(spec.batch_size, len(clean_x))
    iters = spec.epochs * -(-len(clean_x) // batch)
    work, _, _ = cgan.local_train(work, states, clean_x, clean_y, iters, batch, rng)
    return work.generator_params


def robust_aggregate(prev: ModelParams, updates: Sequence[ModelParams], weights: Sequence[float],
                     spec: RobustAggSpec) -> ModelParams:
    """Sign-vote aggregation of client models around the previous server model.

    The weighted mean delta is applied with step ``server_lr`` on dimensions
    where ``|sum_i sign(delta_i)| >= threshold`` and with ``-server_lr``
    elsewhere.
    """
    from .federation import fed_avg

    for u in updates:
        nn.check_compatible(prev, u)
    theta = len(updates) - 1 if spec.threshold is None else spec.threshold
    if not 0 <= theta <= len(updates):
        raise ValidationError(f"threshold {theta} outside [0, {len(updates)}]")
    mean = fed_avg(updates, weights)
    out: ModelParams = {}
    for name, p in prev.items():
        votes = sum(np.sign(u[name] - p) for u in updates)
        lr = np.where(np.abs(votes) >= theta, spec.server_lr, -spec.server_lr)
        out[name] = p + lr * (mean[name] - p)
    return out
