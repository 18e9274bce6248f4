import csv
import json

import numpy as np
import pytest

from fedgansim import checkpoint, cli, config, pnm
from fedgansim.errors import ConfigError, ValidationError


def test_missing_rounds_named():
    with pytest.raises(ConfigError, match="federation.rounds"):
        config.build(config.parse("seed = 1\n"))


def test_parse_errors_carry_location():
    with pytest.raises(ConfigError, match="x.cfg:2"):
        config.parse("seed = 1\nbogus.key = 3\n", "x.cfg")
    with pytest.raises(ConfigError, match="duplicate"):
        config.parse("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match=":1"):
        config.parse("no equals sign\n")


def test_bad_values():
    with pytest.raises(ConfigError):
        config.build({"federation.rounds": "ten"})
    with pytest.raises(ConfigError):
        config.build({"federation.rounds": "5", "feddetect.decay": "1.5"})
    with pytest.raises(ConfigError):
        config.build({"federation.rounds": "5", "federation.malicious_ids": "2,3"})


def test_paper_default_scenario():
    fed = config.build(config.read("paper-default")).federation
    assert fed.n_clients == 4 and len(fed.malicious_ids) == 1 and fed.rounds == 200
    assert fed.warmup == 10 and fed.decay == 0.9 and fed.defense == "feddetect"


def test_dump_round_trips():
    sc = config.build(config.read("smoke"), {"seed": 7})
    again = config.build(config.parse(config.dump(sc)))
    assert again == sc


def _train(tmp_path, *extra):
    out = tmp_path / "run"
    argv = ["train", "--config", "smoke", "--out", str(out), "--quiet", *extra]
    assert cli.main(argv) == 0
    return out


def test_train_zero_rounds(tmp_path):
    out = _train(tmp_path, "--rounds", "0")
    rows = (out / "rounds.csv").read_text().splitlines()
    assert rows == [",".join(cli.ROUNDS_COLUMNS)]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final_weights"] == summary["initial_weights"] == [0.25] * 4
    assert (out / "generator.fgs").is_file() and (out / "samples" / "class_0.pgm").is_file()
    assert not list(out.rglob("*.partial"))


def test_missing_config_exits_nonzero(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "nope.cfg")]) != 0
    assert "nope.cfg" in capsys.readouterr().err


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke") / "run"
    assert cli.main(["train", "--config", "smoke", "--out", str(out), "--quiet",
                     "--defense", "feddetect"]) == 0
    return out


def test_generate(smoke_run, tmp_path):
    ckpt = str(smoke_run / "generator.fgs")
    assert cli.main(["generate", ckpt, "--n", "0", "--out", str(tmp_path / "none")]) == 0
    assert list((tmp_path / "none").iterdir()) == []
    for d in ("a", "b"):
        assert cli.main(["generate", ckpt, "--n", "3", "--seed", "4", "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == [f"class_{c}_{k}.pgm" for c in range(2) for k in range(3)]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert pnm.read(tmp_path / "a" / names[0]).shape == (16, 16, 1)


def test_generate_corrupt_checkpoint(smoke_run, tmp_path, capsys):
    bad = tmp_path / "bad.fgs"
    bad.write_bytes((smoke_run / "generator.fgs").read_bytes()[:-5])
    assert cli.main(["generate", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "FormatError" in capsys.readouterr().err


def test_checkpoint_reserialises_identically(smoke_run):
    blob = (smoke_run / "generator.fgs").read_bytes()
    assert blob.startswith(b"FGS1 ")
    assert checkpoint.dumps(checkpoint.loads(blob)) == blob


def test_replay_reproduces_live_log(smoke_run, tmp_path):
    out = tmp_path / "replay.csv"
    assert cli.main(["replay-detect", str(smoke_run / "rounds.csv"), "--config",
                     str(smoke_run / "config.cfg"), "--out", str(out)]) == 0
    assert out.read_bytes() == (smoke_run / "rounds.csv").read_bytes()


def _loss_csv(path, table):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "client_id", "gen_loss"])
        for t, losses in table.items():
            for i, v in enumerate(losses):
                w.writerow([t, i, v])


def test_replay_missing_client(tmp_path, capsys):
    path = tmp_path / "l.csv"
    _loss_csv(path, {1: [0.1, 0.2, 0.3, 0.4], 2: [0.1, 0.2, 0.3]})
    assert cli.main(["replay-detect", str(path)]) == 2
    err = capsys.readouterr().err
    assert "round 2" in err and "client 3" in err


def test_replay_equal_losses_flag_nothing(tmp_path):
    path = tmp_path / "l.csv"
    _loss_csv(path, {t: [-0.7] * 4 for t in range(1, 31)})
    out = tmp_path / "o.csv"
    assert cli.main(["replay-detect", str(path), "--out", str(out)]) == 0
    recs = cli.read_rounds_csv(out)
    assert not any(r.flagged for r in recs)
    assert all(r.weight_after == 0.25 for r in recs)


def test_replay_tenfold_loss_decays(tmp_path):
    path = tmp_path / "l.csv"
    _loss_csv(path, {t: [-0.5, -0.5, -0.5, -5.0] for t in range(1, 61)})
    out = tmp_path / "o.csv"
    assert cli.main(["replay-detect", str(path), "--out", str(out)]) == 0
    recs = cli.read_rounds_csv(out)
    w3 = {r.round: r.weight_after for r in recs if r.client_id == 3}
    assert w3[10] == 0.25
    assert w3[60] < 0.05


def test_eval(smoke_run, tmp_path):
    assert cli.main(["eval", str(smoke_run)]) == 0
    first = (smoke_run / "metrics.json").read_bytes()
    assert cli.main(["eval", str(smoke_run)]) == 0
    assert (smoke_run / "metrics.json").read_bytes() == first
    result = json.loads(first)
    assert set(result) == {"fidelity", "detection", "utility"}


def test_eval_init_only_near_noise(tmp_path):
    out = _train(tmp_path, "--rounds", "0")
    assert cli.main(["eval", str(out)]) == 0
    fid = json.loads((out / "metrics.json").read_text())["fidelity"]
    assert fid["pooled_mmd2"] > 0.5 * fid["noise_baseline_mmd2"]


def test_eval_geometry_mismatch(smoke_run, tmp_path, capsys):
    real = tmp_path / "real" / "c0"
    real.mkdir(parents=True)
    pnm.write(real / "a.ppm", np.zeros((16, 16, 3), np.uint8))
    pnm.write(real / "b.ppm", np.zeros((16, 16, 3), np.uint8))
    code = cli.main(["eval", str(smoke_run), "--real", str(tmp_path / "real")])
    err = capsys.readouterr().err
    assert code == 2 and "ValidationError" in err and "(16, 16, 3)" in err


def test_eval_missing_artifacts(tmp_path, capsys):
    assert cli.main(["eval", str(tmp_path)]) == 1
    assert "missing" in capsys.readouterr().err


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "fedgansim", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "replay-detect" in res.stdout
