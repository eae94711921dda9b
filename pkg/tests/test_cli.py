import json
from pathlib import Path

import numpy as np
import pytest

from adb import smoke_dataset_path
from adb.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from adb.io import write_csv, write_latent
from adb.theory import ALPHA

DATA = Path(__file__).parent / "data"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_score_contract(tmp_path, capsys):
    X = np.random.default_rng(0).normal(size=(100, 3))
    p = tmp_path / "x.csv"
    write_csv(p, X)
    code, out, _ = run(["score", "--data", p, "--mode", "batchwise", "--batch-size", 50, "--perms", 20,
                        "--seed", 7, "--workers", 1], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert len(doc["values"]) == 20 and all(len(v) == 2 for v in doc["values"])
    assert (doc["seed"], doc["mode"], doc["B"], doc["M"]) == (7, "batchwise", 50, 20)


def test_score_accepts_latent_file_and_reduction(tmp_path, capsys):
    p = tmp_path / "z.adbl"
    write_latent(p, np.random.default_rng(1).normal(size=(30, 4)))
    code, out, _ = run(["score", "--data", p, "--batch-size", 10, "--perms", 3, "--components", 2,
                        "--normalize", "--workers", 1], capsys)
    assert code == EXIT_OK and len(json.loads(out)["values"]) == 3


def test_theory_prints_negative_regime(capsys):
    code, out, _ = run(["theory", "--k", 0.5, "--delta", 1.0], capsys)
    assert code == EXIT_OK
    header, row = out.strip().splitlines()
    assert header == "k,delta,rho,rho_mc,regime"
    k, delta, rho, mc, regime = row.split(",")
    assert float(rho) < 0 and regime == "true" and mc == ""
    code, out, _ = run(["theory", "--k", 2 * ALPHA, "--delta", 1.0, "--mc", 20000], capsys)
    assert out.strip().splitlines()[1].endswith("false")


def test_classify_golden(tmp_path, capsys):
    out = tmp_path / "groups.json"
    for _ in range(2):
        code, _, _ = run(["classify", "--trajectories", DATA / "golden_trajectories.json", "--out", out], capsys)
        assert code == EXIT_OK
        assert out.read_bytes() == (DATA / "golden_groups.json").read_bytes()


def test_score_then_classify_is_reproducible(tmp_path, capsys):
    outs = []
    for workers in (1, 2):
        t = tmp_path / f"t{workers}.json"
        g = tmp_path / f"g{workers}.json"
        assert run(["score", "--data", smoke_dataset_path(), "--label", "y", "--batch-size", 40, "--perms", 6,
                    "--workers", workers, "--out", t], capsys)[0] == EXIT_OK
        assert run(["classify", "--trajectories", t, "--out", g], capsys)[0] == EXIT_OK
        outs.append((t.read_bytes(), g.read_bytes()))
    assert outs[0] == outs[1]


def test_config_file_supplies_defaults(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("B = 60\nM = 4\nseed = 3\nmode = cumulative\n")
    code, out, _ = run(["score", "--data", smoke_dataset_path(), "--label", "y", "--config", cfg,
                        "--workers", 1], capsys)
    doc = json.loads(out)
    assert code == EXIT_OK and (doc["B"], doc["M"], doc["seed"], doc["mode"]) == (60, 4, 3, "cumulative")


@pytest.mark.parametrize("argv", [[], ["bogus"], ["score"], ["score", "--data", "x", "--perms", "many"],
                                  ["theory", "--k", "1"], ["plot", "--out", "o"]])
def test_usage_errors_exit_1(argv, capsys, tmp_path):
    argv = [a if a != "o" else str(tmp_path / "o") for a in argv]
    code, _, err = run(argv, capsys)
    assert code == EXIT_USAGE
    assert "usage" in err or "error" in err


def test_runtime_errors_exit_2(tmp_path, capsys):
    code, _, err = run(["score", "--data", tmp_path / "missing.csv"], capsys)
    assert code == EXIT_RUNTIME and "error" in err
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3\n")
    code, _, err = run(["score", "--data", bad], capsys)
    assert code == EXIT_RUNTIME and ":3:" in err
    cfg = tmp_path / "c.cfg"
    cfg.write_text("nonsense = 1\n")
    assert run(["classify", "--trajectories", DATA / "golden_trajectories.json", "--config", cfg], capsys)[0] \
        == EXIT_RUNTIME


def test_help_exits_0(capsys):
    assert run(["--help"], capsys)[0] == EXIT_OK


def test_oracle_ot(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(a, np.array([[0.0], [2.0]]))
    write_csv(b, np.array([[1.0], [3.0]]))
    code, out, _ = run(["oracle-ot", "--a", a, "--b", b], capsys)
    doc = json.loads(out)
    assert code == EXIT_OK
    assert doc["exact"] == pytest.approx(1.0)
    assert doc["sinkhorn"] == pytest.approx(1.0, rel=0.02)
    assert doc["marginal_violation"] <= 1e-6


def test_plot_writes_figures_and_data(tmp_path, capsys):
    out = tmp_path / "figs"
    code, _, _ = run(["plot", "--trajectories", DATA / "golden_trajectories.json",
                      "--groups", DATA / "golden_groups.json", "--out", out], capsys)
    assert code == EXIT_OK
    assert (out / "trajectories.svg").read_text().lstrip().startswith("<?xml")
    rows = (out / "trajectories.csv").read_text().splitlines()
    assert rows[0] == "permutation,step,value,group" and len(rows) == 1 + 12 * 6


def test_theory_plot(tmp_path, capsys):
    fig = tmp_path / "rho.png"
    code, _, _ = run(["theory", "--k", 0.25, 0.5, 1.0, "--delta", 1.0, 2.0, "--plot", fig], capsys)
    assert code == EXIT_OK and fig.read_bytes()[:4] == b"\x89PNG"
    assert len((tmp_path / "rho.csv").read_text().splitlines()) == 7


def test_experiment_command_small(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("[experiment]\nn_train = 400\nn_val = 100\nn_ood = 150\nd = 4\nhidden_widths = 4\n"
                   "epochs = 2\nbatch_size = 40\nperms = 12\nsubsample_cap = none\nlatent_dim = 4\n"
                   "models_per_group = 2\nsample_size = 3\nfolds = 2\n")
    out = tmp_path / "exp"
    code, stdout, _ = run(["experiment", "--config", cfg, "--seeds", 2, "--workers", 1, "--plot", "--out", out],
                          capsys)
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0, 1]
    for s in (0, 1):
        for name in (f"report_seed{s}.json", f"models_seed{s}.csv", f"scatter_seed{s}.csv", f"scatter_seed{s}.svg"):
            assert (out / name).exists()
    assert (out / "models_seed0.csv").read_text().startswith("id,group,id_mae,id_rmse,ood_mae,ood_rmse")
