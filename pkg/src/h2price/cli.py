"""Command-line driver: ``h2price {solve,simulate,oracle,report}``.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure, 4 certification
violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ascent import ascend, derive_seed, init_multiplier
from .config import ConfigError, RunConfig, bundled_config, load_config
from .lp import LpError
from .model import ModelError
from .oracle import ChainViolation, OracleError, exact_primal, tiny_instance, verify_chain
from .policy import PolicyContext, PolicyError, gap_report, simulate_policy
from .sddp import CutSet, SddpError, theta_floors
from .sdp import OperationalError, solve_operational, write_value_table

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CERT = 0, 2, 3, 4

log = logging.getLogger("h2price")


class StaleArtifacts(ValueError):
    pass


class CertificationError(RuntimeError):
    pass


def _write_lambda(path: Path, lam: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "lambda_eur_per_kwh"])
        for h, v in enumerate(lam):
            w.writerow([h, repr(float(v))])


def _read_lambda(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(r["lambda_eur_per_kwh"]) for r in csv.DictReader(fh)])


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)


def _n_ppa(cfg: RunConfig) -> int:
    return cfg.tiny.n_ppa if cfg.tiny is not None else cfg.grids.n_ppa


def cmd_solve(cfg: RunConfig) -> int:
    plant, noise, grids = cfg.build()
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    schedule = cfg.schedule.to_schedule(_n_ppa(cfg))
    best, report = ascend(plant, noise, grids, schedule, seed=cfg.seed, log=log.info)
    report.to_csv(out / "ascent.csv")
    _write_lambda(out / "best_lambda.csv", best.lam)
    ev = report.best_evaluation
    write_value_table(ev.vf, out / "value_operational.csv")
    ev.sddp.cuts.to_csv(out / "cuts.csv")
    summary = {
        "best_dual_eur": report.best_dual,
        "best_iteration": report.best_iteration,
        "lambda": [float(v) for v in best.lam],
        "iterations": schedule.iterations,
    }
    if np.isfinite(report.best_policy):
        gap = report.gap(plant.c_subsidy)
        fe = report.final_evaluation
        summary.update({
            "best_policy_eur": report.best_policy,
            "best_policy_iteration": report.best_policy_iteration,
            "gap_abs_eur": gap.gap_abs,
            "gap_rel": gap.gap_rel,
            "gap_rel_shifted": gap.gap_rel_shifted,
            "final_policy_eur": fe.mean_cost_k if fe is not None else None,
            "final_policy_ci_eur": fe.ci_k if fe is not None else None,
            "final_gap_rel": gap_report(report.best_dual, fe.mean_cost_k).gap_rel if fe is not None else None,
            "final_subsidy_rate": fe.subsidy_rate if fe is not None else None,
            "subsidy_rate_by_iteration": {r.iteration: r.subsidy_rate for r in report.rows
                                          if np.isfinite(r.subsidy_rate)},
            "final_violations": fe.violations if fe is not None else None,
        })
    _write_json(out / "summary.json", summary)
    log.info("best dual %.2f at iteration %d", report.best_dual, report.best_iteration)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, paths: int) -> int:
    plant, noise, grids = cfg.build()
    out = cfg.out
    try:
        summary = json.loads((out / "summary.json").read_text())
        lam = _read_lambda(out / "best_lambda.csv")
        cuts = CutSet.from_csv(out / "cuts.csv", plant, theta_floors(lam, plant, noise))
    except FileNotFoundError as exc:
        raise StaleArtifacts(f"missing solve artifact: {exc.filename}") from exc
    except (KeyError, ValueError) as exc:
        raise StaleArtifacts(f"malformed solve artifact: {exc}") from exc
    if len(lam) != noise.horizon or not np.array_equal(lam, np.asarray(summary["lambda"])):
        raise StaleArtifacts("best_lambda.csv does not match summary.json; re-run solve")
    vf = solve_operational(lam, plant, noise, grids)
    ctx = PolicyContext(vf, cuts, lam, plant, noise, n_ppa=_n_ppa(cfg))
    ev = simulate_policy(ctx, paths, derive_seed(cfg.seed, 10**6), keep=cfg.simulate.trajectories)
    if ev.record is not None:
        ev.record.to_csv(out / "trajectories.csv")
    gap = gap_report(summary["best_dual_eur"], ev.mean_cost_k, plant.c_subsidy, tolerance=3 * ev.ci_k)
    result = {
        "paths": paths,
        "policy_mean_k_eur": ev.mean_cost_k,
        "policy_ci_k_eur": ev.ci_k,
        "policy_mean_khat_eur": ev.mean_cost_khat,
        "policy_ci_khat_eur": ev.ci_khat,
        "subsidy_rate": ev.subsidy_rate,
        "violations": ev.violations,
        "dual_eur": gap.dual_value,
        "gap_abs_eur": gap.gap_abs,
        "gap_rel": gap.gap_rel,
        "gap_rel_shifted": gap.gap_rel_shifted,
    }
    _write_json(out / "simulation.json", result)
    log.info("policy %.2f +- %.2f, dual %.2f, gap %.4g%%", ev.mean_cost_k, ev.ci_k, gap.dual_value,
             100 * gap.gap_rel)
    if gap.violated or any(ev.violations.values()):
        raise CertificationError(f"negative gap or invariant violations: {result}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    if cfg.tiny is None:
        raise ConfigError("tiny", "the oracle command needs a tiny instance section")
    t = cfg.tiny
    inst = tiny_instance(t.kind, t.horizon, t.n_ppa)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    primal = exact_primal(inst)
    rng = np.random.default_rng(derive_seed(cfg.seed, 7))
    lam0 = init_multiplier(inst.plant).lam
    lams = [lam0] + [lam0 * rng.uniform(0.0, 3.0, len(lam0)) for _ in range(t.random_multipliers)]
    rows = []
    failed = False
    for i, lam in enumerate(lams):
        rep = verify_chain(inst, lam, primal=primal, sddp_iters=t.sddp_iterations, raise_on_violation=False)
        failed |= not rep.holds
        rows.append([i, rep.dual_surrogate, rep.dual_exact, rep.primal, rep.policy, rep.holds])
    with open(out / "chain.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["multiplier", "dual_surrogate", "dual_exact", "primal", "policy", "holds"])
        w.writerows(rows)
    log.info("%s: chain holds for %d of %d multipliers", inst.name, sum(r[-1] for r in rows), len(rows))
    return EXIT_CERT if failed else EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = cfg.out
    try:
        summary = json.loads((out / "summary.json").read_text())
    except FileNotFoundError as exc:
        raise StaleArtifacts(f"missing solve artifact: {exc.filename}") from exc
    print(f"run: {cfg.name}")
    for k in ("best_dual_eur", "best_policy_eur", "gap_abs_eur", "gap_rel", "gap_rel_shifted",
              "final_policy_eur", "final_gap_rel", "final_subsidy_rate"):
        if k in summary:
            print(f"  {k}: {summary[k]}")
    sim = out / "simulation.json"
    if sim.exists():
        for k, v in json.loads(sim.read_text()).items():
            print(f"  simulate.{k}: {v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="h2price", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["solve", "simulate", "oracle", "report"])
    ap.add_argument("--config", default=None,
                    help="YAML run configuration or bundled name (default, coarse, tiny_two, ...)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--iterations", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--paths", type=int, default=None, help="policy evaluation paths")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def _resolve_config(name):
    """A path, or the name of a bundled config such as ``coarse``."""
    if name is None:
        return bundled_config("default")
    if not Path(name).exists() and bundled_config(name).exists():
        return bundled_config(name)
    return name


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(_resolve_config(args.config))
        cfg = replace(cfg, mode=args.command)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, output_dir=args.out)
        if args.iterations is not None:
            if args.iterations < 0:
                raise ConfigError("--iterations", "must be nonnegative")
            cfg = replace(cfg, schedule=replace(cfg.schedule, iterations=args.iterations))
        paths = cfg.simulate.paths if args.paths is None else args.paths
        if paths < 1:
            raise ConfigError("--paths", "must be at least 1")
        if args.command == "solve":
            if args.paths is not None:
                cfg = replace(cfg, schedule=replace(cfg.schedule, final_paths=paths))
            return cmd_solve(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, paths)
        if args.command == "oracle":
            return cmd_oracle(cfg)
        return cmd_report(cfg)
    except (ConfigError, ModelError, StaleArtifacts) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ChainViolation, CertificationError) as exc:
        log.error("certification violation: %s", exc)
        return EXIT_CERT
    except (SddpError, OperationalError, PolicyError, LpError, OracleError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
