"""Command-line runner: ``fgs train | generate | eval | replay-detect``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import cgan, checkpoint, config, dataset, feddetect, federation, metrics, nn, pnm
from .errors import ConfigError, FormatError, IngestionError, ValidationError

ROUNDS_COLUMNS = ("round", "client_id", "gen_loss", "score", "flagged", "cum_flags",
                  "weight_before", "weight_after")
META = "meta"  # checkpoint entry: noise_dim, num_classes, height, width, channels


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def rounds_csv(records: Sequence[federation.RoundRecord]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROUNDS_COLUMNS)
    for r in records:
        writer.writerow([r.round, r.client_id, _fmt(r.gen_loss), _fmt(r.score),
                         int(r.flagged), r.cum_flags, _fmt(r.weight_before),
                         _fmt(r.weight_after)])
    return buf.getvalue().encode("ascii")


def read_rounds_csv(path) -> list[federation.RoundRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(federation.RoundRecord(
                int(row["round"]), int(row["client_id"]), float(row["gen_loss"]),
                float(row["score"]) if row["score"] else None, row["flagged"] == "1",
                int(row["cum_flags"]), float(row["weight_before"]), float(row["weight_after"])))
    return out


def pack_generator(params: nn.ModelParams, noise_dim: int, num_classes: int,
                   image_shape: Sequence[int]) -> nn.ModelParams:
    packed = {META: np.array([noise_dim, num_classes, *image_shape], dtype=np.float64)}
    packed.update(params)
    return packed


def unpack_generator(packed: nn.ModelParams):
    """Return ``(params, spec, noise_dim, num_classes, image_shape)``."""
    if META not in packed or packed[META].shape != (5,):
        raise FormatError("checkpoint has no generator metadata entry")
    noise_dim, num_classes, h, w, c = (int(v) for v in packed[META])
    params = {k: v for k, v in packed.items() if k != META}
    n_layers = len(params) // 2
    try:
        sizes = [params[nn.weight_name(0)].shape[0]] + [
            params[nn.weight_name(i)].shape[1] for i in range(n_layers)]
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing {exc}") from None
    if sizes[0] != noise_dim + num_classes or sizes[-1] != h * w * c:
        raise FormatError("generator shapes disagree with the checkpoint metadata")
    spec = nn.mlp_spec(sizes, output="tanh")
    return params, spec, noise_dim, num_classes, (h, w, c)


def load_corpora(scenario: config.ScenarioConfig, real_dir: Optional[str] = None,
                 expect_shape: Optional[Sequence[int]] = None):
    """(training corpus, held-out real set) for a scenario."""
    spec = scenario.corpus
    source = real_dir or scenario.ingest_path
    if source:
        images = dataset.ingest_directory(source, spec.image_side)
        if not images:
            raise ValidationError(f"{source}: no images")
        if expect_shape is not None and tuple(images[0].pixels.shape) != tuple(expect_shape):
            raise ValidationError(f"real images are {images[0].pixels.shape}, "
                                  f"generator makes {tuple(expect_shape)}")
        heldout, train = dataset.split_per_class(images, scenario.heldout_per_class, scenario.seed)
        return train, heldout
    train = dataset.generate_corpus(spec)
    heldout = [dataset.render_shape(spec, c, spec.samples_per_class + i)
               for c in range(spec.num_classes) for i in range(scenario.heldout_per_class)]
    return train, heldout


def sample_grid(images: np.ndarray, cols: int) -> np.ndarray:
    """Tile (n, h, w, c) images into one uint8 grid with a one-pixel border."""
    n, h, w, c = images.shape
    rows = -(-n // cols)
    grid = np.zeros((rows * (h + 1) + 1, cols * (w + 1) + 1, c), dtype=np.uint8)
    for k in range(n):
        r, q = divmod(k, cols)
        grid[1 + r * (h + 1):1 + r * (h + 1) + h, 1 + q * (w + 1):1 + q * (w + 1) + w] = \
            pnm.to_bytes(images[k])
    return grid


def _image_ext(channels: int) -> str:
    return ".pgm" if channels == 1 else ".ppm"


def cmd_train(args) -> int:
    overrides = dict(args.set or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.rounds is not None:
        overrides["federation.rounds"] = args.rounds
    if args.defense is not None:
        overrides["defense.name"] = args.defense
    if args.out is not None:
        overrides["output.dir"] = args.out
    scenario = config.build(config.read(args.config), overrides)
    out = Path(scenario.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, _ = load_corpora(scenario)

    def progress(t):
        if not args.quiet and (t % 10 == 0 or t == scenario.federation.rounds):
            print(f"round {t}/{scenario.federation.rounds}", file=sys.stderr)

    log = federation.run_experiment(scenario.federation, corpus, progress=progress)
    shape = corpus[0].pixels.shape
    template = log.model_template

    _write_atomic(out / "config.cfg", config.dump(scenario).encode("ascii"))
    _write_atomic(out / "rounds.csv", rounds_csv(log.records))
    checkpoint.save(pack_generator(log.server_generator, template.noise_dim,
                                   template.num_classes, shape), out / "generator.fgs")
    model = log.server_model()
    samples = out / "samples"
    samples.mkdir(exist_ok=True)
    for c in range(template.num_classes):
        z = cgan.sample_noise(np.random.default_rng([scenario.seed, 0x9D, c]), 16,
                              template.noise_dim)
        imgs = cgan.generate(model, z, np.full(16, c)).reshape((16,) + shape)
        pnm.write(samples / f"class_{c}{_image_ext(shape[2])}", sample_grid(imgs, 4))
    fed = scenario.federation
    summary = {
        "rounds": fed.rounds,
        "n_clients": fed.n_clients,
        "malicious_ids": sorted(fed.malicious_ids),
        "defense": fed.defense,
        "defense_params": _defense_params(fed),
        "initial_weights": log.initial_weights.tolist(),
        "final_weights": log.final_weights().tolist(),
        "flag_counts": _flag_counts(log.records, fed.n_clients),
        "image_shape": list(shape),
        "num_classes": template.num_classes,
    }
    _write_atomic(out / "summary.json",
                  (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode("ascii"))
    if not args.quiet:
        print(f"wrote {out}", file=sys.stderr)
    return 0


def _flag_counts(records, n):
    counts = [0] * n
    for r in records:
        counts[r.client_id] = r.cum_flags
    return counts


def _defense_params(fed: federation.FederationConfig) -> dict:
    if fed.defense == "feddetect":
        return {"warmup": fed.warmup, "decay": fed.decay, "n_trees": fed.forest.n_trees,
                "subsample_size": fed.forest.subsample_size,
                "score_threshold": fed.forest.score_threshold}
    if fed.defense == "robust_agg":
        theta = fed.robust.threshold
        return {"threshold": fed.n_clients - 1 if theta is None else theta,
                "server_lr": fed.robust.server_lr}
    if fed.defense == "augmentation":
        a = fed.augmentation
        return {"horizontal_flip": a.horizontal_flip, "flip_prob": a.flip_prob,
                "rotation": list(a.rotation) if a.rotation else None}
    if fed.defense == "reconstruction":
        r = fed.reconstruction
        return {"clean_samples_per_class": r.clean_samples_per_class, "epochs": r.epochs,
                "learning_rate": r.learning_rate}
    return {}


def cmd_generate(args) -> int:
    params, spec, noise_dim, num_classes, shape = unpack_generator(checkpoint.load(args.checkpoint))
    if args.n < 0:
        raise ValidationError("--n must be nonnegative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.n == 0:
        return 0
    rng = np.random.default_rng(args.seed)
    ext = _image_ext(shape[2])
    for c in range(num_classes):
        z = cgan.sample_noise(rng, args.n, noise_dim)
        imgs = cgan.run_generator(params, spec, num_classes, z, np.full(args.n, c))
        for k, img in enumerate(imgs):
            pnm.write(out / f"class_{c}_{k}{ext}", pnm.to_bytes(img.reshape(shape)))
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run_dir)
    needed = ["config.cfg", "generator.fgs", "rounds.csv"]
    missing = [n for n in needed if not (run / n).is_file()]
    if missing:
        raise FileNotFoundError(f"{run}: missing {', '.join(missing)}")
    scenario = config.build(config.parse((run / "config.cfg").read_text(),
                                         str(run / "config.cfg")))
    params, spec, noise_dim, num_classes, shape = unpack_generator(
        checkpoint.load(run / "generator.fgs"))
    train, heldout = load_corpora(scenario, args.real, shape)
    real_x, real_y = dataset.stack(heldout)
    if tuple(heldout[0].pixels.shape) != tuple(shape):
        raise ValidationError(
            f"real images are {heldout[0].pixels.shape}, generator makes {tuple(shape)}")
    per = scenario.metric_samples_per_class
    rng = np.random.default_rng([scenario.seed, 0xE7A])
    labels = np.repeat(np.arange(num_classes), per)
    synth = cgan.run_generator(params, spec, num_classes,
                               cgan.sample_noise(rng, len(labels), noise_dim), labels)
    idx = np.concatenate([np.flatnonzero(real_y == c)[:per] for c in range(num_classes)])
    fid = metrics.fidelity(synth, labels, real_x[idx], real_y[idx])
    fed = scenario.federation
    det = metrics.detection_metrics(read_rounds_csv(run / "rounds.csv"), fed.malicious_ids,
                                    fed.warmup)
    result = {
        "fidelity": {
            "pooled_mmd2": fid.pooled,
            "per_class_mmd2": {str(k): v for k, v in fid.per_class.items()},
            "bandwidth": fid.bandwidth,
            "noise_baseline_mmd2": metrics.noise_baseline(real_x[idx], fid.bandwidth,
                                                          scenario.seed),
        },
        "detection": {
            "precision": det.precision, "recall": det.recall,
            "true_positives": det.true_positives, "false_positives": det.false_positives,
            "false_negatives": det.false_negatives,
            "final_malicious_weights": {str(k): v for k, v in det.final_weights.items()},
        },
        "utility": [],
    }
    if args.utility:
        n_synth = scenario.utility_synth_per_class
        s_labels = np.repeat(np.arange(num_classes), n_synth)
        s_x = cgan.run_generator(params, spec, num_classes,
                                 cgan.sample_noise(rng, len(s_labels), noise_dim), s_labels)
        tr_x, tr_y = dataset.stack(train)
        report = metrics.utility_study(tr_x, tr_y, s_x, s_labels, real_x, real_y,
                                       scenario.utility_real_per_class, n_synth,
                                       scenario.utility_seeds)
        result["utility"] = [r.__dict__ for r in report.rows]
        _write_atomic(run / "utility.csv", utility_csv(report, scenario.utility_real_per_class))
    _write_atomic(run / "metrics.json",
                  (json.dumps(result, indent=2, sort_keys=True) + "\n").encode("ascii"))
    return 0


def utility_csv(report: metrics.UtilityReport, counts: Sequence[int],
                label: str = "synthetic") -> bytes:
    """Settings as rows, real-per-class counts as columns (mean and std)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["setting", *counts])
    for arm, name in (("real_only", "real_only"), ("augmented", label)):
        stats = [report.summary(n, arm) for n in counts]
        writer.writerow([f"{name}_mean", *(f"{m:.4f}" for m, _ in stats)])
        writer.writerow([f"{name}_std", *(f"{s:.4f}" for _, s in stats)])
    return buf.getvalue().encode("ascii")


def replay_detection(losses: dict, n_clients: int, params: feddetect.ForestParams,
                     warmup: int, decay: float, seed: int) -> list[federation.RoundRecord]:
    """Re-run detection over ``{round: [loss per client]}`` exactly as a live run would."""
    state = feddetect.DetectionState.initial(n_clients, warmup, decay)
    records = []
    for t in sorted(losses):
        before = state.weights.copy()
        state, outcome = feddetect.detect_round(state, losses[t], params, t, seed)
        for i, loss in enumerate(losses[t]):
            score = None if outcome.scores is None else float(outcome.scores[i])
            records.append(federation.RoundRecord(
                t, i, float(loss), score, i in outcome.flagged, int(state.flag_counts[i]),
                float(before[i]), float(state.weights[i])))
    return records


def read_loss_table(path) -> tuple[dict, int]:
    """``{round: [loss of client 0..N-1]}`` from a CSV with round, client_id, gen_loss."""
    table: dict = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        cols = set(reader.fieldnames or ())
        if not {"round", "client_id", "gen_loss"} <= cols:
            raise FormatError(f"{path}: need columns round, client_id, gen_loss")
        for lineno, row in enumerate(reader, 2):
            try:
                t, i, loss = int(row["round"]), int(row["client_id"]), float(row["gen_loss"])
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{lineno}: bad row {row}") from None
            if (i in table.setdefault(t, {})):
                raise ValidationError(f"round {t}: duplicate row for client {i}")
            table[t][i] = loss
    n = 1 + max((i for rows in table.values() for i in rows), default=-1)
    out = {}
    for t, rows in sorted(table.items()):
        for i in range(n):
            if i not in rows:
                raise ValidationError(f"round {t}: no loss for client {i}")
        out[t] = [rows[i] for i in range(n)]
    return out, n


def cmd_replay_detect(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    raw = config.read(args.config) if args.config else {"federation.rounds": "0"}
    fed = config.build(raw, overrides).federation
    losses, n = read_loss_table(args.losses)
    if n < 2 and losses:
        raise ValidationError("detection needs at least two clients")
    records = replay_detection(losses, n, fed.forest, fed.warmup, fed.decay, fed.seed)
    data = rounds_csv(records)
    if args.out:
        _write_atomic(Path(args.out), data)
    else:
        sys.stdout.write(data.decode("ascii"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a federated experiment")
    p.add_argument("--config", required=True, help="config file or bundled scenario name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--rounds", type=int)
    p.add_argument("--defense", choices=federation.DEFENSES)
    p.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images from a generator checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=16, help="images per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="fidelity, detection and utility metrics of a run")
    p.add_argument("run_dir")
    p.add_argument("--real", help="directory of real images (default: the run's corpus)")
    p.add_argument("--utility", action="store_true", help="also run the utility study")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay-detect", help="re-run detection on a loss CSV")
    p.add_argument("losses")
    p.add_argument("--config", help="config supplying feddetect.* and seed")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay_detect)
    return parser


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, ValidationError, IngestionError) as exc:
        print(f"fgs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fgs {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
