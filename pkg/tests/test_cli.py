import csv
import hashlib
import json

import pytest

from spacetime_set.cli import TABLE1_HEADER, build_parser, main

GEN = ["--n-particles", "4", "--seq-len", "4", "--horizon", "40", "--n-train", "10", "--n-val", "4", "--n-test", "4"]
MODEL = ["--d", "8", "--hdim", "16"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", *GEN, "--seed", "3", "--out", str(out)]) == 0
    return out


def _digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_generate_manifest_and_files(data_dir):
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["schema_version"] == 1
    assert manifest["config"]["n_particles"] == 4 and manifest["config"]["seed"] == 3
    assert {k: v["count"] for k, v in manifest["files"].items()} == {"train": 10, "val": 4, "test": 4}


def test_generate_reproducible(data_dir, tmp_path):
    assert main(["generate", *GEN, "--seed", "3", "--out", str(tmp_path)]) == 0
    assert _digest(tmp_path) == _digest(data_dir)


def test_generate_defaults_and_noise_flag():
    args = build_parser().parse_args(["generate"])
    assert (args.n_particles, args.seq_len, args.horizon) == (5, 10, 500)
    assert (args.n_train, args.n_val, args.n_test) == (1000, 200, 200)
    assert build_parser().parse_args(["generate", "--noise-variance", "0.5"]).noise_variance == 0.5


def test_generate_rejects_short_horizon(tmp_path, capsys):
    assert main(["generate", "--horizon", "5", "--out", str(tmp_path)]) == 2
    assert "horizon" in capsys.readouterr().err


def test_help_documents_defaults(capsys):
    for cmd in ("generate", "train", "eval", "ablate", "verify", "scale-sweep"):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert "default" in text
    with pytest.raises(SystemExit):
        main(["generate", "--help"])
    assert "16000" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_train_and_eval(data_dir, tmp_path, capsys):
    ckpt = tmp_path / "m.sett"
    rc = main(["train", "--data", str(data_dir), *MODEL, "--epochs", "1", "--batch-size", "5", "--lr", "1e-3",
               "--no-pe", "--no-adj", "--out", str(ckpt)])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["model"] == "set" and ckpt.exists()
    lines = (tmp_path / "m.sett.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data_dir)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["split"] == "test" and metrics["mse"] > 0


def test_train_linear_has_three_params(data_dir, tmp_path, capsys):
    rc = main(["train", "--model", "linear", "--data", str(data_dir), "--epochs", "1", "--out", str(tmp_path / "l.sett")])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["params"] == 3


def test_train_mismatch_and_missing_data(data_dir, tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing"), "--epochs", "1"]) == 3
    bad = tmp_path / "bad"
    bad.mkdir()
    for name in ("train", "val", "test"):
        (bad / f"{name}.setd").write_bytes(b"junk")
    assert main(["train", "--data", str(bad), "--epochs", "1", "--out", str(tmp_path / "x.sett")]) == 3
    assert "I/O error" in capsys.readouterr().err


def test_ablate_csv(data_dir, tmp_path):
    out = tmp_path / "ablate.csv"
    rc = main(["ablate", "--data", str(data_dir), *MODEL, "--epochs", "1", "--batch-size", "10", "--lr", "1e-3",
               "--out", str(out)])
    assert rc == 0
    raw = out.read_bytes()
    assert b"\r\n" not in raw
    rows = list(csv.reader(raw.decode("utf-8").splitlines()))
    assert rows[0] == TABLE1_HEADER
    assert len(rows) == 5
    ratios = [float(r[5]) for r in rows[1:]]
    assert min(ratios) == 1.0
    assert rows[1][1] == "Equiv=True, Adj=False, SATT=True, TATT=True"
    assert rows[2][1].startswith("Equiv=False")
    assert int(rows[3][2]) > int(rows[1][2])


def test_verify_pass_fail_and_deterministic(capsys):
    args = ["verify", "--trials", "4", "--only", "egcl_equivariance", "position_equivariance"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert main([*args, "--tolerance", "0"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_verify_unknown_property_is_usage_error():
    assert main(["verify", "--only", "nope"]) == 2


def test_scale_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = main(["scale-sweep", "--n-list", "3,6", "--seq-len", "3", "--horizon", "30", "--n-train", "4", "--n-val", "2",
               "--n-test", "2", *MODEL, "--epochs", "1", "--lr", "1e-3", "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(out.read_text().splitlines()))
    assert len(rows) == 2 * 4
    params = {}
    for r in rows:
        params.setdefault(r["model"], set()).add(int(r["params"]))
    assert params["linear"] == {3}
    assert all(len(v) == 1 for v in params.values())
