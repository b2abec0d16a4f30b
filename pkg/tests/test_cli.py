import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mcno import io
from mcno.cli import build_parser, main
from mcno.spectral import Dataset
from mcno.rng import Rng

SUBCOMMANDS = ["gen-data", "train", "eval", "verify-bound", "gradcheck", "sweep"]


def toy_file(path, n=12, G=32):
    x = np.arange(G) / G
    c = Rng(0).normal((n, 2))
    a = c[:, :1] * np.sin(2 * np.pi * x) + c[:, 1:] * np.cos(4 * np.pi * x)
    io.save_dataset(path, Dataset("burgers", G, a, 0.5 * a + 0.1 * a**2 + 0.2))
    return str(path)


SMALL = ["--dv", "4", "--samples", "4", "--d-proj", "8", "--batch", "4"]


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--help"])
    assert e.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mcno", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-data" in out.stdout


def test_bad_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as e:
        main(["verify-bound", "--bogus"])
    assert e.value.code == 2
    assert "--bogus" in capsys.readouterr().err


def test_bad_value_exits_two(capsys):
    with pytest.raises(SystemExit) as e:
        main(["verify-bound", "--ngrid", "16,x"])
    assert e.value.code == 2


def test_defaults_match_protocol():
    p = build_parser()
    g = p.parse_args(["gen-data", "--out", "x"])
    assert (g.n, g.nu, g.pde) == (1100, 0.1, "burgers")
    v = p.parse_args(["verify-bound"])
    assert v.ngrid == [16, 64, 256, 1024] and v.n == [25, 50, 100, 200, 400]
    assert (v.delta, v.trials) == (0.05, 200)
    s = p.parse_args(["sweep", "--data", "d"])
    assert s.values == [25, 50, 75, 100, 150]


def test_gen_data_smoke_and_determinism(tmp_path, capsys):
    args = ["gen-data", "--pde", "kdv", "--n", "2", "--hi-res", "64", "--res", "32,64",
            "--dt", "1e-3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert "kdv_s32.mcnd" in out and "min=" in out and "mean=" in out
    for r in (32, 64):
        fa = (tmp_path / "a" / f"kdv_s{r}.mcnd").read_bytes()
        assert fa == (tmp_path / "b" / f"kdv_s{r}.mcnd").read_bytes()
    assert io.load_dataset(tmp_path / "a" / "kdv_s32.mcnd").n_samples == 2


def test_gen_data_solver_failure_exit_one(tmp_path, capsys):
    rc = main(["gen-data", "--n", "2", "--hi-res", "64", "--res", "64", "--dt", "0.5",
               "--out", str(tmp_path)])
    assert rc == 1
    assert "sample" in capsys.readouterr().err


def test_train_eval_round_trip(tmp_path, capsys):
    data = toy_file(tmp_path / "d.mcnd")
    out = tmp_path / "run"
    rc = main(["train", "--data", data, "--n-train", "8", "--n-test", "4", "--epochs", "2",
               *SMALL, "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    final = float(text.split("final test rel-L2:")[1].split()[0])
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
    assert main(["eval", "--ckpt", str(out / "checkpoint_final.mcnc"), "--data", data,
                 "--n-test", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "resolution,test_rel_l2"
    res, err = lines[1].split(",")
    assert int(res) == 32
    assert float(err) == float(rows[-1]["test_rel_l2"])
    assert abs(float(err) - final) <= 1e-5 * final


def test_train_zero_epochs_and_rerun(tmp_path, capsys):
    data = toy_file(tmp_path / "d.mcnd")
    outs = []
    for tag in ("x", "y"):
        assert main(["train", "--data", data, "--n-train", "8", "--n-test", "4",
                     "--epochs", "1", *SMALL, "--seed", "3", "--out", str(tmp_path / tag)]) == 0
        with open(tmp_path / tag / "metrics.csv") as fh:
            outs.append([line.split(",")[:3] for line in fh])
    assert outs[0] == outs[1]
    assert (tmp_path / "x" / "checkpoint_final.mcnc").read_bytes() == \
           (tmp_path / "y" / "checkpoint_final.mcnc").read_bytes()
    assert main(["train", "--data", data, "--n-train", "8", "--n-test", "4", "--epochs", "0",
                 *SMALL]) == 0


def test_config_file_and_flag_precedence(tmp_path, capsys):
    data = toy_file(tmp_path / "d.mcnd")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"d_v": 4, "n_samples": 4, "d_proj": 8},
                               "train": {"epochs": 1, "batch_size": 4}}))
    out = tmp_path / "run"
    assert main(["train", "--data", data, "--n-train", "8", "--n-test", "4",
                 "--config", str(cfg), "--samples", "6", "--out", str(out)]) == 0
    model = io.load_checkpoint(out / "checkpoint_final.mcnc")
    assert model.config.d_v == 4 and model.config.n_samples == 6
    cfg.write_text(json.dumps({"model": {"width": 4}}))
    assert main(["train", "--data", data, "--config", str(cfg)]) == 1
    assert "model.width" in capsys.readouterr().err


def test_eval_cross_resolution(tmp_path, capsys):
    data = toy_file(tmp_path / "d.mcnd", G=64)
    coarse = tmp_path / "c.mcnd"
    io.save_dataset(coarse, io.load_dataset(data).at_resolution(32))
    out = tmp_path / "run"
    main(["train", "--data", str(coarse), "--n-train", "8", "--n-test", "4", "--epochs", "1",
          *SMALL, "--out", str(out)])
    capsys.readouterr()
    ck = str(out / "checkpoint_final.mcnc")
    assert main(["eval", "--ckpt", ck, "--data", str(coarse), data, "--n-test", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [line.split(",")[0] for line in lines[1:]] == ["32", "64"]
    assert main(["eval", "--ckpt", ck, "--data", data, "--resolution", "32", "--n-test", "4"]) == 0
    same = capsys.readouterr().out.strip().splitlines()[1]
    assert same == lines[1]


def test_verify_bound_constant_kernel(tmp_path, capsys):
    prefix = str(tmp_path / "rep")
    rc = main(["verify-bound", "--kernel", "constant", "--ngrid", "16,64", "--n", "4,8",
               "--trials", "10", "--probes", "8", "--out", prefix])
    assert rc == 0
    out = capsys.readouterr().out
    assert "bound_theorem,bound_appendix" in out and "min coverage 1.000" in out
    report = json.loads(open(prefix + ".json").read())
    assert all(c["max_sup_error"] < 1e-14 for c in report["cells"])


def test_verify_bound_low_coverage_exit_one(monkeypatch, capsys):
    import mcno.cli as cli
    from mcno.mc_bound import BoundReport

    cell = {"n_grid": 16, "n": 4, "bias_sup": 0.0, "bound_theorem": 0.1, "bound_appendix": 0.1,
            "coverage": 0.5, "quantile_sup_error": 0.2}
    fake = BoundReport({}, {}, 0.0, [cell], {16: 0.0}, {}, {}, {})
    monkeypatch.setattr(cli, "run_trials", lambda cfg, jobs=1: fake)
    assert main(["verify-bound", "--ngrid", "16", "--n", "4"]) == 1
    assert "BELOW" in capsys.readouterr().out


def test_gradcheck_ops(capsys):
    assert main(["gradcheck", "--scope", "ops"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_sweep_csv(tmp_path, capsys):
    data = toy_file(tmp_path / "d.mcnd")
    out = tmp_path / "sw"
    rc = main(["sweep", "--data", data, "--n-train", "8", "--n-test", "4", "--values", "4,6",
               "--epochs", "1", "--dv", "4", "--d-proj", "8", "--batch", "4", "--out", str(out)])
    assert rc == 0
    with open(out / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["n_samples"]) for r in rows] == [4, 6]


def test_missing_file_exit_one(tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "none.mcnc"), "--data", "x"]) == 1
    assert "error" in capsys.readouterr().err
