import csv
import json
import subprocess
import sys

import pytest

from robust_mcbf.cli import main
from robust_mcbf.errors import InvalidInput
from robust_mcbf.experiments import ExperimentConfig, load_config


def _toml(path, **kv):
    lines = []
    for k, v in kv.items():
        lines.append(f"{k} = {json.dumps(v)}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_verb(tmp_path, capsys):
    cfg = _toml(tmp_path / "c.toml", Nc=2, K=1, Nt=3, gamma_db=5.0, eps=0.05, seed=1,
                methods=["nonrobust", "robust"])
    out = tmp_path / "out"
    assert main(["solve", cfg, "-o", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["scenario"] == "single_solve" and doc["numerical_failures"] == 0
    rows = _read(out / "single_solve.csv")
    assert [r["method"] for r in rows] == ["nonrobust", "robust"]
    assert float(rows[1]["P_W"]) >= float(rows[0]["P_W"])
    run = json.loads((out / "single_solve_run.json").read_text())
    assert run["seed"] == 1 and run["config"]["Nt"] == 3


def test_single_cell_centralized_only(tmp_path):
    cfg = _toml(tmp_path / "c.toml", Nc=1, K=1, Nt=2, gamma_db=0.0, eps=0.05)
    assert main(["solve", cfg, "-o", str(tmp_path / "o")]) == 0
    assert main(["admm", cfg, "-o", str(tmp_path / "o2")]) == 2


def test_usage_errors(tmp_path, capsys):
    bad = _toml(tmp_path / "b.toml", scenario="fig7")
    assert main(["sweep", bad]) == 2
    assert "unknown scenario" in capsys.readouterr().err
    assert main(["sweep", _toml(tmp_path / "k.toml", Nc=2, colour="blue")]) == 2
    assert main(["solve", str(tmp_path / "missing.toml")]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate", bad])


def test_config_validation():
    with pytest.raises(InvalidInput):
        ExperimentConfig(trials=0)
    with pytest.raises(InvalidInput):
        ExperimentConfig(gamma_grid_db=[])
    with pytest.raises(InvalidInput):
        ExperimentConfig(methods=["psychic"])


def test_overrides(tmp_path):
    cfg = _toml(tmp_path / "c.toml", scenario="power_vs_gamma", seed=3)
    ec = load_config(cfg, seed=9, trials=None)
    assert ec.seed == 9 and ec.trials == 200


@pytest.fixture(scope="module")
def sweep_cfg(tmp_path_factory):
    d = tmp_path_factory.mktemp("sweep")
    return _toml(d / "s.toml", scenario="power_vs_gamma", Nc=2, K=1, Nt=2, eps=0.05,
                 gamma_grid_db=[0.0, 10.0], trials=3, seed=11), d


def test_sweep_replay_is_byte_identical(sweep_cfg):
    cfg, d = sweep_cfg
    assert main(["sweep", cfg, "-o", str(d / "a")]) == 0
    assert main(["sweep", cfg, "-o", str(d / "b"), "--workers", "2"]) == 0
    for name in ("power_vs_gamma.csv", "power_vs_gamma_trials.csv"):
        assert (d / "a" / name).read_bytes() == (d / "b" / name).read_bytes()


def test_feasibility_counting(sweep_cfg):
    cfg, d = sweep_cfg
    main(["sweep", cfg, "-o", str(d / "c")])
    trials = _read(d / "c" / "power_vs_gamma_trials.csv")
    agg = _read(d / "c" / "power_vs_gamma.csv")
    p_max = ExperimentConfig().system().p_max
    for a in agg:
        sel = [t for t in trials if t["point"] == a["point"] and t["method"] == a["method"]]
        feas = [t for t in sel if t["status"] == "optimal" and float(t["pmax_W"]) <= p_max]
        assert int(a["feasible"]) == len(feas)
        assert all(t["feasible"] == "true" for t in feas)
        assert float(a["rate_pct"]) == pytest.approx(100.0 * len(feas) / len(sel))


def test_admm_verb(tmp_path):
    cfg = _toml(tmp_path / "a.toml", Nc=2, K=1, Nt=2, gamma_db=5.0, eps=0.05, trials=1,
                admm_iters=12)
    out = tmp_path / "o"
    assert main(["admm", cfg, "-o", str(out)]) == 0
    rows = _read(out / "admm_convergence_trace.csv")
    assert len(rows) >= 2 and all(int(r["scalars"]) == 4 for r in rows)


def test_console_script(tmp_path):
    cfg = _toml(tmp_path / "c.toml", Nc=2, K=1, Nt=2, gamma_db=0.0, eps=0.05)
    r = subprocess.run([sys.executable, "-m", "robust_mcbf.cli", "solve", cfg, "-o",
                        str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["scenario"] == "single_solve"
