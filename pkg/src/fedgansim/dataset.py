"""Toy shape corpus, directory ingestion, trigger poisoning and sharding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import pnm
from .errors import IngestionError, ValidationError


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray  # (height, width, channels), values in [-1, 1]
    label: int


@dataclass(frozen=True)
class ShapeCorpusSpec:
    image_side: int = 16
    num_classes: int = 2
    samples_per_class: int = 128
    position_jitter: float = 2.0  # pixels, uniform in [-j, j]
    scale_jitter: float = 0.15  # relative, uniform in [-j, j]
    seed: int = 0


SHAPES = ("disc", "cross", "ring", "bar")
_SUPERSAMPLE = 4


def _coverage(shape: str, side: int, cx: float, cy: float, scale: float) -> np.ndarray:
    """Fraction of each pixel covered by ``shape`` (supersampled)."""
    n = side * _SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / _SUPERSAMPLE - 0.5
    yy, xx = np.meshgrid(coords - cy, coords - cx, indexing="ij")
    if shape == "disc":
        inside = xx ** 2 + yy ** 2 <= (0.30 * side * scale) ** 2
    elif shape == "cross":
        arm, half = 0.36 * side * scale, 0.10 * side * scale
        inside = ((np.abs(xx) <= arm) & (np.abs(yy) <= half)) | (
            (np.abs(yy) <= arm) & (np.abs(xx) <= half))
    elif shape == "ring":
        r2 = xx ** 2 + yy ** 2
        inside = (r2 <= (0.34 * side * scale) ** 2) & (r2 >= (0.20 * side * scale) ** 2)
    else:
        inside = (np.abs(xx) <= 0.36 * side * scale) & (np.abs(yy) <= 0.12 * side * scale)
    return inside.reshape(side, _SUPERSAMPLE, side, _SUPERSAMPLE).mean(axis=(1, 3))


def render_shape(spec: ShapeCorpusSpec, label: int, index: int) -> LabeledImage:
    """Deterministic image number ``index`` of class ``label``."""
    rng = np.random.default_rng([spec.seed, label, index])
    side = spec.image_side
    dx, dy = rng.uniform(-spec.position_jitter, spec.position_jitter, size=2)
    scale = 1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter)
    centre = (side - 1) / 2.0
    cov = _coverage(SHAPES[label], side, centre + dx, centre + dy, scale)
    return LabeledImage((2.0 * cov - 1.0)[:, :, None], label)


def generate_corpus(spec: ShapeCorpusSpec) -> list[LabeledImage]:
    """Balanced corpus, class-major order."""
    if spec.image_side < 8:
        raise ValidationError(f"image_side must be >= 8 to render shapes, got {spec.image_side}")
    if not 1 <= spec.num_classes <= len(SHAPES):
        raise ValidationError(f"num_classes must be in [1, {len(SHAPES)}]")
    return [
        render_shape(spec, c, i)
        for c in range(spec.num_classes)
        for i in range(spec.samples_per_class)
    ]


@dataclass(frozen=True)
class TriggerSpec:
    size: int = 4
    pattern: str = "white"  # or "random"
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValidationError(f"trigger size must be positive, got {self.size}")
        if self.pattern not in ("white", "random"):
            raise ValidationError(f"unknown trigger pattern {self.pattern!r}")

    def patch(self, channels: int) -> np.ndarray:
        """The (size, size, channels) patch; identical on every call."""
        if self.pattern == "white":
            return np.ones((self.size, self.size, channels))
        rng = np.random.default_rng(self.seed)
        raw = rng.integers(0, 256, size=(self.size, self.size, channels), dtype=np.uint8)
        return pnm.to_unit(raw)


def poison(image: LabeledImage, trigger: TriggerSpec) -> LabeledImage:
    """Paste the trigger onto the bottom-right corner; the label is kept."""
    h, w, c = image.pixels.shape
    s = trigger.size
    if s > min(h, w):
        raise ValidationError(f"trigger of side {s} does not fit a {h}x{w} image")
    out = image.pixels.copy()
    out[h - s:, w - s:, :] = trigger.patch(c)
    return LabeledImage(out, image.label)


def poison_all(images: Sequence[LabeledImage], trigger: TriggerSpec) -> list[LabeledImage]:
    return [poison(im, trigger) for im in images]


def shard(corpus: Sequence, n_clients: int, seed: int) -> list[list]:
    """Random near-equal partition; any remainder goes to the last shards."""
    if n_clients < 1:
        raise ValidationError(f"n_clients must be >= 1, got {n_clients}")
    order = np.random.default_rng(seed).permutation(len(corpus))
    base, extra = divmod(len(corpus), n_clients)
    sizes = [base + (1 if k >= n_clients - extra else 0) for k in range(n_clients)]
    shards, start = [], 0
    for size in sizes:
        shards.append([corpus[j] for j in order[start:start + size]])
        start += size
    return shards


def stack(images: Sequence[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten images into an (n, h*w*c) matrix plus an int label vector."""
    if not images:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    x = np.stack([im.pixels.reshape(-1) for im in images])
    y = np.array([im.label for im in images], dtype=np.int64)
    return x, y


def split_per_class(images: Sequence[LabeledImage], per_class: int,
                    seed: int) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """Random ``per_class`` images of every class, and the remainder."""
    rng = np.random.default_rng(seed)
    labels = np.array([im.label for im in images])
    chosen: set[int] = set()
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < per_class:
            raise ValidationError(f"class {c} has {len(idx)} images, {per_class} requested")
        chosen.update(rng.choice(idx, size=per_class, replace=False).tolist())
    picked = [images[i] for i in sorted(chosen)]
    rest = [images[i] for i in range(len(images)) if i not in chosen]
    return picked, rest


def resize_bilinear(img: np.ndarray, side: int) -> np.ndarray:
    """Pixel-centre-aligned bilinear resampling of an (h, w, c) image to side x side."""
    h, w, c = img.shape
    if (h, w) == (side, side):
        return img.astype(np.float64).copy()
    ys = (np.arange(side) + 0.5) * h / side - 0.5
    xs = (np.arange(side) + 0.5) * w / side - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([
        ndimage.map_coordinates(img[:, :, k].astype(np.float64), grid, order=1, mode="nearest")
        for k in range(c)
    ], axis=-1)


def ingest_directory(path, image_side: int) -> list[LabeledImage]:
    """Load ``path/<class>/*.pgm|*.ppm``; classes are numbered by sorted folder name."""
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    out: list[LabeledImage] = []
    channels = None
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    for label, folder in enumerate(class_dirs):
        for f in sorted(folder.iterdir()):
            if f.suffix.lower() not in (".pgm", ".ppm"):
                continue
            raw = pnm.read(f)
            if channels is None:
                channels = raw.shape[2]
            elif raw.shape[2] != channels:
                raise IngestionError(f"{f}: {raw.shape[2]} channels, corpus has {channels}")
            unit = pnm.to_unit(raw)
            out.append(LabeledImage(np.clip(resize_bilinear(unit, image_side), -1.0, 1.0), label))
    return out


def write_directory(images: Sequence[LabeledImage], path) -> None:
    """Write a corpus in the layout read by :func:`ingest_directory`."""
    root = Path(path)
    for k, im in enumerate(images):
        folder = root / f"class_{im.label}"
        folder.mkdir(parents=True, exist_ok=True)
        ext = ".pgm" if im.pixels.shape[2] == 1 else ".ppm"
        pnm.write(folder / f"{k:06d}{ext}", pnm.to_bytes(im.pixels))
