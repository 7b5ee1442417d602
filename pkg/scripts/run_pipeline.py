"""Run solve then simulate for a bundled config and record wall times.

Usage: python3 scripts/run_pipeline.py {default,coarse} [--out DIR]
"""
import argparse
import json
import time
from pathlib import Path

from h2price.cli import main
from h2price.config import bundled_config

ROOT = Path(__file__).resolve().parents[1]


def run(name: str, out: Path) -> dict:
    cfg = str(bundled_config(name))
    out.mkdir(parents=True, exist_ok=True)
    times = {}
    for cmd in ("solve", "simulate"):
        t0 = time.perf_counter()
        code = main([cmd, "--config", cfg, "--out", str(out)])
        times[cmd] = time.perf_counter() - t0
        if code != 0:
            raise SystemExit(f"{cmd} exited with {code}")
    summary = json.loads((out / "summary.json").read_text())
    summary.pop("lambda")
    result = {"config": name, "wall_time_s": times, "solve": summary,
              "simulate": json.loads((out / "simulation.json").read_text())}
    (out / "run.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("name", choices=["default", "coarse"])
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    out = Path(args.out) if args.out else ROOT / "results" / args.name
    print(json.dumps(run(args.name, out), indent=2, sort_keys=True))
