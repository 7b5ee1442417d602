import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from h2price import cli
from h2price.ascent import init_multiplier
from h2price.config import bundled_config, load_config
from h2price.oracle import ChainReport, exact_policy_value, tiny_instance
from h2price.policy import PolicyContext
from h2price.sddp import CutSet, theta_floors
from h2price.sdp import solve_operational

TINY = str(bundled_config("tiny_deterministic"))


def _lam(path):
    with open(path) as fh:
        return np.array([float(r["lambda_eur_per_kwh"]) for r in csv.DictReader(fh)])


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    assert cli.main(["solve", "--config", TINY, "--out", str(out), "-q"]) == cli.EXIT_OK
    return out


def test_solve_emits_artifacts(solved):
    for name in ("config.yaml", "ascent.csv", "best_lambda.csv", "value_operational.csv", "cuts.csv",
                 "summary.json"):
        assert (solved / name).exists()
    summary = json.loads((solved / "summary.json").read_text())
    assert np.array_equal(_lam(solved / "best_lambda.csv"), summary["lambda"])
    assert load_config(solved / "config.yaml").to_dict()["tiny"]["kind"] == "deterministic"
    header = (solved / "cuts.csv").read_text().splitlines()[0]
    assert header == "stage,intercept,slope_p,slope_q"


def test_zero_iterations_emits_initial_multiplier(tmp_path):
    assert cli.main(["solve", "--config", TINY, "--out", str(tmp_path), "--iterations", "0", "-q"]) == 0
    inst = tiny_instance("deterministic")
    assert np.array_equal(_lam(tmp_path / "best_lambda.csv"), init_multiplier(inst.plant).lam)
    assert len((tmp_path / "ascent.csv").read_text().splitlines()) == 2


def test_simulate_deterministic_matches_oracle(solved):
    assert cli.main(["simulate", "--config", TINY, "--out", str(solved), "--paths", "30", "-q"]) == 0
    sim = json.loads((solved / "simulation.json").read_text())
    assert sim["policy_ci_k_eur"] == 0.0 and all(v == 0 for v in sim["violations"].values())
    rows = list(csv.DictReader(open(solved / "trajectories.csv")))
    by_path = {}
    for r in rows:
        by_path.setdefault(r["path"], []).append({k: v for k, v in r.items() if k != "path"})
    assert len({json.dumps(v) for v in by_path.values()}) == 1
    # cross-check with exact tree evaluation of the same policy
    inst = tiny_instance("deterministic")
    lam = _lam(solved / "best_lambda.csv")
    cuts = CutSet.from_csv(solved / "cuts.csv", inst.plant, theta_floors(lam, inst.plant, inst.noise))
    ctx = PolicyContext(solve_operational(lam, inst.plant, inst.noise, inst.grids), cuts, lam, inst.plant,
                        inst.noise, n_ppa=inst.n_ppa)
    assert sim["policy_mean_k_eur"] == pytest.approx(exact_policy_value(ctx), abs=1e-9)


def test_simulate_seed_determinism(solved, tmp_path):
    cfg = str(bundled_config("tiny_two"))
    assert cli.main(["solve", "--config", cfg, "--out", str(tmp_path), "--iterations", "2", "-q"]) == 0
    results = []
    for _ in range(2):
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path), "--paths", "100", "-q"]) == 0
        results.append(json.loads((tmp_path / "simulation.json").read_text()))
    assert results[0] == results[1]
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path), "--paths", "100", "--seed", "5",
                     "-q"]) == 0
    assert json.loads((tmp_path / "simulation.json").read_text()) != results[0]


def test_stale_artifacts_refused(solved, tmp_path):
    for name in ("summary.json", "best_lambda.csv", "cuts.csv"):
        (tmp_path / name).write_bytes((solved / name).read_bytes())
    lam = _lam(tmp_path / "best_lambda.csv")
    with open(tmp_path / "best_lambda.csv", "w") as fh:
        fh.write("hour,lambda_eur_per_kwh\n" + "".join(f"{h},{float(v) + 0.01!r}\n" for h, v in enumerate(lam)))
    assert cli.main(["simulate", "--config", TINY, "--out", str(tmp_path), "-q"]) == cli.EXIT_CONFIG


def test_missing_inputs(tmp_path):
    assert cli.main(["simulate", "--config", TINY, "--out", str(tmp_path), "-q"]) == cli.EXIT_CONFIG
    assert cli.main(["solve", "--config", str(tmp_path / "none.yaml"), "-q"]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"grids": {"n_stock": "many"}}))
    assert cli.main(["solve", "--config", str(bad), "-q"]) == cli.EXIT_CONFIG
    assert cli.main(["oracle", "--config", str(bundled_config("coarse")), "-q"]) == cli.EXIT_CONFIG
    assert cli.main(["solve", "--config", TINY, "--iterations", "-1", "-q"]) == cli.EXIT_CONFIG


def test_oracle_command(tmp_path):
    cfg = yaml.safe_load(open(TINY))
    cfg["tiny"]["random_multipliers"] = 3
    path = tmp_path / "t.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert cli.main(["oracle", "--config", str(path), "--out", str(tmp_path), "-q"]) == cli.EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "chain.csv")))
    assert len(rows) == 4 and all(r["holds"] == "True" for r in rows)


def test_exit_codes_for_failures(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "verify_chain", lambda *a, **k: ChainReport(1.0, 0.0, 0.0, 0.0))
    monkeypatch.setattr(cli, "exact_primal", lambda inst: 0.0)
    assert cli.main(["oracle", "--config", TINY, "--out", str(tmp_path), "-q"]) == cli.EXIT_CERT

    def boom(*a, **k):
        raise cli.SddpError("stage 0 LP infeasible")

    monkeypatch.setattr(cli, "ascend", boom)
    assert cli.main(["solve", "--config", TINY, "--out", str(tmp_path), "-q"]) == cli.EXIT_SOLVER


def test_report_and_module_entry(solved, capsys):
    assert cli.main(["report", "--config", TINY, "--out", str(solved)]) == 0
    assert "best_dual_eur" in capsys.readouterr().out
    proc = subprocess.run([sys.executable, "-m", "h2price", "report", "--config", TINY, "--out", str(solved)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "run: tiny_deterministic" in proc.stdout


def test_config_by_bundled_name(tmp_path):
    assert cli._resolve_config("coarse") == bundled_config("coarse")
    assert cli._resolve_config(None) == bundled_config("default")
    assert cli._resolve_config(str(tmp_path / "x.yaml")) == str(tmp_path / "x.yaml")
