"""Flat ``key = value`` scenario configs with dotted section keys.

Blank lines and ``#`` comments are ignored. Every recognised key is listed in
``KEYS`` with its default; ``federation.rounds`` has no default and must be
given. :func:`dump` writes a fully resolved config that re-runs to the same
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from . import defenses, feddetect
from .dataset import ShapeCorpusSpec, TriggerSpec
from .errors import ConfigError, ValidationError
from .federation import FederationConfig, ModelConfig

REQUIRED = object()


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> Optional[int]:
    return int(text) if text.strip() else None


def _range(text: str) -> Optional[tuple[float, float]]:
    if not text.strip():
        return None
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


KEYS = {
    "seed": (int, "0"),
    "corpus.image_side": (int, "16"),
    "corpus.num_classes": (int, "2"),
    "corpus.samples_per_class": (int, "1024"),
    "corpus.position_jitter": (float, "2.0"),
    "corpus.scale_jitter": (float, "0.15"),
    "corpus.ingest_path": (str, ""),
    "federation.n_clients": (int, "4"),
    "federation.malicious_ids": (_int_list, "3"),
    "federation.local_epochs": (int, "1"),
    "federation.rounds": (int, REQUIRED),
    "federation.batch_size": (int, "32"),
    "trigger.size": (int, "4"),
    "trigger.pattern": (str, "white"),
    "trigger.seed": (int, "0"),
    "defense.name": (str, "none"),
    "feddetect.warmup": (int, "10"),
    "feddetect.decay": (float, "0.9"),
    "feddetect.n_trees": (int, "100"),
    "feddetect.subsample_size": (_opt_int, ""),
    "feddetect.score_threshold": (float, "0.6"),
    "robust_agg.threshold": (_opt_int, ""),
    "robust_agg.server_lr": (float, "1.0"),
    "augmentation.horizontal_flip": (_bool, "true"),
    "augmentation.flip_prob": (float, "0.5"),
    "augmentation.rotation": (_range, "-90,90"),
    "reconstruction.clean_samples_per_class": (int, "500"),
    "reconstruction.epochs": (int, "200"),
    "reconstruction.learning_rate": (float, "0.0002"),
    "model.noise_dim": (int, "32"),
    "model.g_hidden": (_int_list, "256,256"),
    "model.d_hidden": (_int_list, "128"),
    "model.learning_rate": (float, "0.0002"),
    "metrics.heldout_per_class": (int, "512"),
    "metrics.samples_per_class": (int, "512"),
    "metrics.utility_real_per_class": (_int_list, "1,10,20,50"),
    "metrics.utility_synth_per_class": (int, "500"),
    "metrics.utility_seeds": (_int_list, "1,2,3,4,5"),
    "output.dir": (str, "runs/default"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    raw: dict  # resolved key -> string value
    federation: FederationConfig
    corpus: ShapeCorpusSpec
    ingest_path: Optional[str]
    heldout_per_class: int
    metric_samples_per_class: int
    utility_real_per_class: tuple[int, ...]
    utility_synth_per_class: int
    utility_seeds: tuple[int, ...]
    output_dir: str

    @property
    def seed(self) -> int:
        return self.federation.seed


def parse(text: str, source: str = "<config>") -> dict:
    """Parse key = value lines into a dict of strings."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def bundled_path(name: str) -> Optional[Path]:
    ref = resources.files("fedgansim") / "scenarios" / f"{name}.cfg"
    return Path(str(ref)) if ref.is_file() else None


def read(path_or_name: str) -> dict:
    """Read a config file, or a bundled scenario by name (e.g. ``paper-default``)."""
    path = Path(path_or_name)
    if not path.is_file():
        bundled = bundled_path(path_or_name)
        if bundled is None:
            raise ConfigError(f"no config file or bundled scenario named {path_or_name!r}")
        path = bundled
    return parse(path.read_text(), str(path))


def build(raw: dict, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Resolve defaults, apply overrides and construct the typed config."""
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        merged[key] = str(value)
    values: dict = {}
    resolved: dict = {}
    for key, (conv, default) in KEYS.items():
        text = merged.get(key, default)
        if text is REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        try:
            values[key] = conv(text)
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: bad value {text!r} ({exc})") from None
        resolved[key] = text
    v = values
    try:
        rotation = v["augmentation.rotation"]
        fed = FederationConfig(
            n_clients=v["federation.n_clients"],
            malicious_ids=frozenset(v["federation.malicious_ids"]),
            local_epochs=v["federation.local_epochs"],
            rounds=v["federation.rounds"],
            batch_size=v["federation.batch_size"],
            seed=v["seed"],
            trigger=TriggerSpec(v["trigger.size"], v["trigger.pattern"], v["trigger.seed"]),
            defense=v["defense.name"],
            model=ModelConfig(v["model.noise_dim"], v["model.g_hidden"], v["model.d_hidden"],
                              v["model.learning_rate"]),
            forest=feddetect.ForestParams(v["feddetect.n_trees"], v["feddetect.subsample_size"],
                                          v["feddetect.score_threshold"]),
            warmup=v["feddetect.warmup"],
            decay=v["feddetect.decay"],
            robust=defenses.RobustAggSpec(v["robust_agg.threshold"], v["robust_agg.server_lr"]),
            augmentation=defenses.AugmentationSpec(v["augmentation.horizontal_flip"],
                                                   v["augmentation.flip_prob"], rotation),
            reconstruction=defenses.ReconstructionSpec(
                v["reconstruction.clean_samples_per_class"], v["reconstruction.epochs"],
                v["reconstruction.learning_rate"]),
        )
        corpus = ShapeCorpusSpec(v["corpus.image_side"], v["corpus.num_classes"],
                                 v["corpus.samples_per_class"], v["corpus.position_jitter"],
                                 v["corpus.scale_jitter"], v["seed"])
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    if not 0.0 < fed.decay < 1.0:
        raise ConfigError(f"feddetect.decay must lie in (0, 1), got {fed.decay}")
    return ScenarioConfig(
        raw=resolved, federation=fed, corpus=corpus,
        ingest_path=v["corpus.ingest_path"] or None,
        heldout_per_class=v["metrics.heldout_per_class"],
        metric_samples_per_class=v["metrics.samples_per_class"],
        utility_real_per_class=v["metrics.utility_real_per_class"],
        utility_synth_per_class=v["metrics.utility_synth_per_class"],
        utility_seeds=v["metrics.utility_seeds"],
        output_dir=v["output.dir"],
    )


def dump(scenario: ScenarioConfig) -> str:
    return "".join(f"{key} = {scenario.raw[key]}\n" for key in KEYS)
