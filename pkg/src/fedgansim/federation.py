"""Federated GAN training: clients keep their discriminators, the server averages generators."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import cgan, defenses, feddetect, nn
from .dataset import LabeledImage, TriggerSpec, poison_all, shard, stack
from .errors import ValidationError
from .nn import AdamState, ModelParams

DEFENSES = ("none", "feddetect", "robust_agg", "augmentation", "reconstruction")


@dataclass(frozen=True)
class ModelConfig:
    noise_dim: int = 32
    g_hidden: tuple[int, ...] = (256, 256)
    d_hidden: tuple[int, ...] = (128,)
    learning_rate: float = cgan.GAN_LR


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 4
    malicious_ids: frozenset = frozenset({3})
    local_epochs: int = 1
    rounds: int = 200
    batch_size: int = 32
    seed: int = 0
    trigger: Optional[TriggerSpec] = TriggerSpec(size=4)
    defense: str = "none"
    model: ModelConfig = ModelConfig()
    forest: feddetect.ForestParams = feddetect.ForestParams()
    warmup: int = 10
    decay: float = 0.9
    robust: defenses.RobustAggSpec = defenses.RobustAggSpec()
    augmentation: defenses.AugmentationSpec = defenses.AugmentationSpec()
    reconstruction: defenses.ReconstructionSpec = defenses.ReconstructionSpec()
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "malicious_ids", frozenset(int(i) for i in self.malicious_ids))
        if self.n_clients < 1:
            raise ValidationError("n_clients must be positive")
        if not len(self.malicious_ids) < self.n_clients / 2:
            raise ValidationError(
                f"{len(self.malicious_ids)} malicious of {self.n_clients} is not a minority")
        if any(not 0 <= i < self.n_clients for i in self.malicious_ids):
            raise ValidationError(f"malicious ids {sorted(self.malicious_ids)} out of range")
        if self.malicious_ids and self.trigger is None:
            raise ValidationError("malicious clients need a trigger")
        if self.defense not in DEFENSES:
            raise ValidationError(f"unknown defense {self.defense!r}; choose from {DEFENSES}")
        if self.rounds < 0 or self.local_epochs < 0 or self.batch_size < 1:
            raise ValidationError("rounds/local_epochs must be >= 0 and batch_size >= 1")


@dataclass
class ClientState:
    id: int
    model: cgan.CganModel
    opt_states: tuple[AdamState, AdamState]  # (discriminator, generator)
    shard_x: np.ndarray
    shard_y: np.ndarray
    malicious: bool = False


@dataclass(frozen=True)
class RoundReport:
    """What a client uploads: its generator and one scalar loss. Nothing else."""
    round: int
    client_id: int
    gen_loss: float
    generator: ModelParams


@dataclass(frozen=True)
class RoundRecord:
    round: int
    client_id: int
    gen_loss: float
    score: Optional[float]
    flagged: bool
    cum_flags: int
    weight_before: float
    weight_after: float


@dataclass
class ExperimentLog:
    config: FederationConfig
    initial_weights: np.ndarray
    initial_generator: ModelParams
    records: list[RoundRecord] = field(default_factory=list)
    server_generator: Optional[ModelParams] = None
    model_template: Optional[cgan.CganModel] = None

    def rows_for(self, t: int) -> list[RoundRecord]:
        return [r for r in self.records if r.round == t]

    def final_weights(self) -> np.ndarray:
        if not self.records:
            return self.initial_weights.copy()
        last = self.records[-1].round
        return np.array([r.weight_after for r in self.rows_for(last)])

    def server_model(self) -> cgan.CganModel:
        return replace(self.model_template, generator_params=self.server_generator)


def check_weights(weights: Sequence[float], n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValidationError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError(f"weights must be finite and nonnegative: {w}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
    return w


def fed_avg(models: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Elementwise weighted mean of aggregation-compatible models.

    Computed as ``m_0 + sum_i w_i (m_i - m_0)``, which equals the weighted
    mean when the weights sum to one and returns identical models exactly.
    """
    if not models:
        raise ValidationError("nothing to aggregate")
    for m in models[1:]:
        nn.check_compatible(models[0], m)
    w = check_weights(weights, len(models))
    out: ModelParams = {}
    for name, base in models[0].items():
        acc = base.copy()
        for wi, m in zip(w[1:], models[1:]):
            acc += wi * (m[name] - base)
        out[name] = acc
    return out


def iterations_per_epoch(shard_size: int, batch_size: int) -> int:
    return math.ceil(shard_size / batch_size)


def client_rng(seed: int, client_id: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, client_id, t])


def client_update(client: ClientState, server_gen: ModelParams, t: int, local_epochs: int,
                  batch_size: int, seed: int, augment=None) -> tuple[RoundReport, ClientState]:
    """Receive the global generator, train locally, report (generator, mean telemetry loss)."""
    model = replace(client.model, generator_params=server_gen)
    k_iters = local_epochs * iterations_per_epoch(len(client.shard_x), batch_size)
    model, states, reports = cgan.local_train(
        model, client.opt_states, client.shard_x, client.shard_y, k_iters, batch_size,
        client_rng(seed, client.id, t), augment)
    loss = float(np.mean([r.gen_loss_paper for r in reports])) if reports else 0.0
    updated = replace(client, model=model, opt_states=states)
    return RoundReport(t, client.id, loss, model.generator_params), updated


def run_round(clients: Sequence[ClientState], server_gen: ModelParams, weights, t: int, *,
              local_epochs: int = 1, batch_size: int = 32, seed: int = 0,
              hook: Optional[Callable] = None, aggregate: Optional[Callable] = None,
              augment=None, workers: int = 1):
    """Algorithm-1 round: every client trains from ``server_gen``; the server aggregates.

    ``hook(reports, weights, t) -> weights`` runs after collection and
    before aggregation. ``aggregate(prev, generators, weights)`` replaces
    plain FedAvg. Returns ``(reports, clients, new_server_gen, weights)``.
    """
    weights = check_weights(weights, len(clients))

    def work(c):
        return client_update(c, server_gen, t, local_epochs, batch_size, seed, augment)

    if workers > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, clients))
    else:
        results = [work(c) for c in clients]
    reports = [r for r, _ in results]
    new_clients = [c for _, c in results]
    if hook is not None:
        weights = check_weights(hook(reports, weights, t), len(clients))
    generators = [r.generator for r in reports]
    if aggregate is None:
        new_gen = fed_avg(generators, weights)
    else:
        new_gen = aggregate(server_gen, generators, weights)
    return reports, new_clients, new_gen, weights


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("FGS_THREADS", "1")))
    except ValueError:
        return 1


def setup_clients(config: FederationConfig, corpus: Sequence[LabeledImage]):
    """Shard the corpus, poison malicious shards, build the initial models."""
    if len(corpus) < config.n_clients:
        raise ValidationError(f"{len(corpus)} images cannot be shared by {config.n_clients} clients")
    shards = shard(corpus, config.n_clients, config.seed)
    image_dim = corpus[0].pixels.size
    num_classes = max(im.label for im in corpus) + 1
    mc = config.model
    template = cgan.build_model(num_classes, image_dim, config.seed, mc.noise_dim,
                                mc.g_hidden, mc.d_hidden)
    clients = []
    for i, images in enumerate(shards):
        malicious = i in config.malicious_ids
        if malicious:
            images = poison_all(images, config.trigger)
        x, y = stack(images)
        d_params = nn.init_params(template.discriminator_spec,
                                  int(np.random.SeedSequence([config.seed, i]).generate_state(1)[0]))
        model = replace(template, discriminator_params=d_params)
        clients.append(ClientState(i, model, cgan.fresh_optimizers(model, mc.learning_rate),
                                   x, y, malicious))
    return clients, template


def run_experiment(config: FederationConfig, corpus: Sequence[LabeledImage],
                   clean_pool: Optional[Sequence[LabeledImage]] = None,
                   progress: Optional[Callable[[int], None]] = None) -> ExperimentLog:
    """Run ``config.rounds`` federated rounds with the configured defense.

    ``clean_pool`` feeds the reconstruction defense; without it the benign
    clients' shards are used.
    """
    clients, template = setup_clients(config, corpus)
    n = config.n_clients
    server_gen = nn.copy_params(template.generator_params)
    state = feddetect.DetectionState.initial(n, config.warmup, config.decay)
    log = ExperimentLog(config, state.weights.copy(), nn.copy_params(server_gen),
                        model_template=template)

    augment = None
    if config.defense == "augmentation":
        shape = corpus[0].pixels.shape
        augment = defenses.flat_augmenter(config.augmentation, shape)
    aggregate = None
    if config.defense == "robust_agg":
        def aggregate(prev, gens, w):
            return defenses.robust_aggregate(prev, gens, w, config.robust)

    pending: dict = {}

    def hook(reports, weights, t):
        nonlocal state
        if config.defense != "feddetect":
            pending["outcome"] = None
            return weights
        state, outcome = feddetect.detect_round(
            state, [r.gen_loss for r in reports], config.forest, t, config.seed)
        pending["outcome"] = outcome
        return state.weights

    workers = config.workers if config.workers > 1 else default_workers()
    for t in range(1, config.rounds + 1):
        before = state.weights.copy()
        reports, clients, server_gen, after = run_round(
            clients, server_gen, state.weights, t, local_epochs=config.local_epochs,
            batch_size=config.batch_size, seed=config.seed, hook=hook, aggregate=aggregate,
            augment=augment, workers=workers)
        outcome = pending["outcome"]
        for r in reports:
            i = r.client_id
            score = None if outcome is None or outcome.scores is None else float(outcome.scores[i])
            log.records.append(RoundRecord(
                t, i, r.gen_loss, score,
                outcome is not None and i in outcome.flagged,
                int(state.flag_counts[i]), float(before[i]), float(after[i])))
        if progress is not None:
            progress(t)

    if config.defense == "reconstruction" and config.rounds > 0:
        server_gen = reconstruct_server(config, corpus, server_gen, clean_pool)
    log.server_generator = server_gen
    return log


def reconstruct_server(config: FederationConfig, corpus: Sequence[LabeledImage],
                       server_gen: ModelParams,
                       clean_pool: Optional[Sequence[LabeledImage]] = None) -> ModelParams:
    """Fine-tune a trained server generator on clean data (the reconstruction baseline).

    Training under ``defense="reconstruction"`` is identical to an undefended
    run up to this step, so it can also be applied to a saved generator.
    ``config.reconstruction.clean_samples_per_class`` images of each class are
    drawn from ``clean_pool``, or from the benign clients' shards by default.
    """
    spec = config.reconstruction
    clients, template = setup_clients(config, corpus)
    if clean_pool is not None:
        x, y = stack(list(clean_pool))
    else:
        x = np.vstack([c.shard_x for c in clients if not c.malicious])
        y = np.concatenate([c.shard_y for c in clients if not c.malicious])
    rng = np.random.default_rng([config.seed, 0xC1EA])
    keep = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        take = min(spec.clean_samples_per_class, len(idx))
        keep.extend(rng.choice(idx, size=take, replace=False).tolist())
    keep = np.sort(np.array(keep, dtype=np.int64))
    model = replace(template, generator_params=server_gen)
    return defenses.reconstruct(model, x[keep], y[keep], spec, config.seed)
