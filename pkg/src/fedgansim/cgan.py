"""Conditional GAN built from dense layers, and one client's local training.

The generator maps ``[z, onehot(y)]`` to a flattened image in (-1, 1); the
discriminator maps ``[x, onehot(y)]`` to a probability that ``x`` is real.
The discriminator is trained on the usual cross-entropy objective, the
generator on the non-saturating surrogate ``-mean log D(G(z|y))``. The
loss reported to the server is the saturating quantity
``mean log(1 - D(G(z|y)))``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .errors import ValidationError
from .nn import AdamState, DenseLayerSpec, ModelParams

CLAMP = 1e-7

# DCGAN recipe
GAN_LR = 2e-4
GAN_BETA1 = 0.5


@dataclass(frozen=True)
class CganModel:
    generator_params: ModelParams
    discriminator_params: ModelParams
    generator_spec: tuple[DenseLayerSpec, ...]
    discriminator_spec: tuple[DenseLayerSpec, ...]
    noise_dim: int
    num_classes: int
    image_dim: int

    def __post_init__(self):
        g, d = self.generator_spec, self.discriminator_spec
        if g[0].in_dim != self.noise_dim + self.num_classes or g[-1].out_dim != self.image_dim:
            raise ValidationError("generator widths disagree with noise/class/image dims")
        if g[-1].activation != "tanh":
            raise ValidationError("generator output must be tanh")
        if d[0].in_dim != self.image_dim + self.num_classes or d[-1].out_dim != 1:
            raise ValidationError("discriminator widths disagree with image/class dims")
        if d[-1].activation != "sigmoid":
            raise ValidationError("discriminator output must be sigmoid")


@dataclass(frozen=True)
class LossReport:
    disc_loss: Optional[float]
    gen_loss_paper: Optional[float]
    gen_loss_train: Optional[float]
    noise: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None


def generator_spec(noise_dim: int, num_classes: int, image_dim: int,
                   hidden: Sequence[int] = (256, 256)) -> tuple[DenseLayerSpec, ...]:
    return tuple(nn.mlp_spec([noise_dim + num_classes, *hidden, image_dim], output="tanh"))


def discriminator_spec(image_dim: int, num_classes: int,
                       hidden: Sequence[int] = (128,)) -> tuple[DenseLayerSpec, ...]:
    return tuple(nn.mlp_spec([image_dim + num_classes, *hidden, 1], output="sigmoid"))


def build_model(num_classes: int, image_dim: int, seed: int, noise_dim: int = 32,
                g_hidden: Sequence[int] = (256, 256), d_hidden: Sequence[int] = (128,)) -> CganModel:
    gs = generator_spec(noise_dim, num_classes, image_dim, g_hidden)
    ds = discriminator_spec(image_dim, num_classes, d_hidden)
    seeds = np.random.SeedSequence(seed).generate_state(2)
    return CganModel(nn.init_params(gs, int(seeds[0])), nn.init_params(ds, int(seeds[1])),
                     gs, ds, noise_dim, num_classes, image_dim)


def fresh_optimizers(model: CganModel, lr: float = GAN_LR) -> tuple[AdamState, AdamState]:
    """(discriminator, generator) Adam states."""
    return (AdamState.fresh(model.discriminator_params, lr, beta1=GAN_BETA1),
            AdamState.fresh(model.generator_params, lr, beta1=GAN_BETA1))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes}), got {labels}")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def sample_noise(rng: np.random.Generator, batch: int, dim: int) -> np.ndarray:
    return rng.standard_normal((batch, dim))


def generate(model: CganModel, z: np.ndarray, labels) -> np.ndarray:
    return run_generator(model.generator_params, model.generator_spec, model.num_classes,
                         z, labels)


def run_generator(params: ModelParams, spec: Sequence[DenseLayerSpec], num_classes: int,
                  z: np.ndarray, labels) -> np.ndarray:
    """Generator forward pass without a full :class:`CganModel`."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    c = one_hot(labels, num_classes)
    if len(c) != len(z):
        raise ValidationError(f"{len(z)} noise rows but {len(c)} labels")
    return nn.forward(params, spec, np.hstack([z, c]))


def discriminate(model: CganModel, images: np.ndarray, labels) -> np.ndarray:
    """D(x|y) as a flat vector of probabilities."""
    c = one_hot(labels, model.num_classes)
    inp = np.hstack([np.atleast_2d(images), c])
    return nn.forward(model.discriminator_params, model.discriminator_spec, inp)[:, 0]


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, CLAMP, 1.0 - CLAMP)


def disc_loss_and_grad(p_real: np.ndarray, p_fake: np.ndarray):
    """-mean log D(x) - mean log(1 - D(G(z))) and its gradient w.r.t. each logit.

    The clamp applies inside the logs only; the logit gradients
    ``(p - 1) / n`` and ``p / n`` stay informative when D saturates.
    """
    loss = -np.mean(np.log(_clamp(p_real))) - np.mean(np.log1p(-_clamp(p_fake)))
    return float(loss), (p_real - 1.0) / len(p_real), p_fake / len(p_fake)


def gen_loss_paper(p_fake: np.ndarray) -> float:
    """mean log(1 - D(G(z|y))), the telemetry the server receives."""
    return float(np.mean(np.log1p(-_clamp(p_fake))))


def gen_surrogate_and_grad(p_fake: np.ndarray):
    """-mean log D(G(z|y)) and its gradient w.r.t. the discriminator logit."""
    return float(-np.mean(np.log(_clamp(p_fake)))), (p_fake - 1.0) / len(p_fake)


def discriminator_step(model: CganModel, real_batch: np.ndarray, real_labels,
                       opt_state: AdamState, rng: np.random.Generator):
    """One Adam step on the discriminator with the generator frozen.

    Fakes are generated for the same labels as the real batch. The
    returned report is measured before the update.
    """
    real_batch = np.atleast_2d(np.asarray(real_batch, dtype=np.float64))
    labels = np.asarray(real_labels, dtype=np.int64)
    if len(real_batch) == 0:
        raise ValidationError("empty real batch")
    if len(labels) != len(real_batch):
        raise ValidationError(f"{len(real_batch)} images but {len(labels)} labels")
    z = sample_noise(rng, len(labels), model.noise_dim)
    fake = generate(model, z, labels)
    c = one_hot(labels, model.num_classes)
    inp = np.vstack([np.hstack([real_batch, c]), np.hstack([fake, c])])
    out, trace = nn.forward_trace(model.discriminator_params, model.discriminator_spec, inp)
    p = out[:, 0]
    n = len(labels)
    loss, g_real, g_fake = disc_loss_and_grad(p[:n], p[n:])
    grads, _ = nn.backward(model.discriminator_params, model.discriminator_spec, inp,
                           np.concatenate([g_real, g_fake])[:, None], trace,
                           at_preactivation=True)
    new_params, new_state = nn.adam_step(model.discriminator_params, grads, opt_state)
    report = LossReport(loss, gen_loss_paper(p[n:]), None, z, labels)
    return replace(model, discriminator_params=new_params), new_state, report


def generator_grads(model: CganModel, z: np.ndarray, labels):
    """Surrogate loss and its gradient w.r.t. the generator parameters."""
    c = one_hot(labels, model.num_classes)
    g_in = np.hstack([z, c])
    fake, g_trace = nn.forward_trace(model.generator_params, model.generator_spec, g_in)
    d_in = np.hstack([fake, c])
    out, d_trace = nn.forward_trace(model.discriminator_params, model.discriminator_spec, d_in)
    loss, g_p = gen_surrogate_and_grad(out[:, 0])
    _, g_din = nn.backward(model.discriminator_params, model.discriminator_spec, d_in,
                           g_p[:, None], d_trace, at_preactivation=True)
    grads, _ = nn.backward(model.generator_params, model.generator_spec, g_in,
                           g_din[:, :model.image_dim], g_trace)
    return loss, grads


def generator_step(model: CganModel, batch_size: int, labels, opt_state: AdamState,
                   rng: np.random.Generator):
    """One Adam step on the generator with the discriminator frozen.

    ``gen_loss_train`` is the surrogate before the update; ``gen_loss_paper``
    is ``mean log(1 - D(G(z|y)))`` for the updated generator on the same
    noise and labels, both of which are recorded in the report.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    if labels is None:
        labels = rng.integers(0, model.num_classes, size=batch_size)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != batch_size:
        raise ValidationError(f"batch_size {batch_size} but {len(labels)} labels")
    z = sample_noise(rng, batch_size, model.noise_dim)
    loss, grads = generator_grads(model, z, labels)
    new_params, new_state = nn.adam_step(model.generator_params, grads, opt_state)
    model = replace(model, generator_params=new_params)
    telemetry = gen_loss_paper(discriminate(model, generate(model, z, labels), labels))
    return model, new_state, LossReport(None, telemetry, loss, z, labels)


def local_train(model: CganModel, opt_states: tuple[AdamState, AdamState],
                shard_x: np.ndarray, shard_y: np.ndarray, k_iters: int, batch_size: int,
                rng: np.random.Generator,
                augment: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None):
    """``k_iters`` alternating discriminator-then-generator updates.

    Minibatches walk a fresh permutation of the shard and reshuffle when it
    runs out. ``augment`` (if given) transforms each real minibatch before
    the discriminator sees it. Returns ``(model, (d_state, g_state), reports)``
    where each report merges the two half-steps of one iteration.
    """
    shard_x = np.asarray(shard_x, dtype=np.float64)
    shard_y = np.asarray(shard_y, dtype=np.int64)
    if len(shard_x) == 0:
        raise ValidationError("empty data shard")
    d_state, g_state = opt_states
    batch_size = min(batch_size, len(shard_x))
    reports: list[LossReport] = []
    order = rng.permutation(len(shard_x))
    pos = 0
    for _ in range(k_iters):
        if pos + batch_size > len(order):
            order = rng.permutation(len(shard_x))
            pos = 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        real = shard_x[idx]
        if augment is not None:
            real = augment(real, rng)
        labels = shard_y[idx]
        model, d_state, d_rep = discriminator_step(model, real, labels, d_state, rng)
        model, g_state, g_rep = generator_step(model, len(labels), labels, g_state, rng)
        reports.append(LossReport(d_rep.disc_loss, g_rep.gen_loss_paper, g_rep.gen_loss_train,
                                  g_rep.noise, g_rep.labels))
    return model, (d_state, g_state), reports
