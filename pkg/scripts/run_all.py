"""Run shipped experiment configs, write SVG figures and print a summary table.

    python scripts/run_all.py                          # every config at full size
    python scripts/run_all.py configs/box.toml --runs 5
    python scripts/run_all.py --horizon 20000 --runs 2 --out /tmp/quick
"""
import argparse
import dataclasses
import logging
from pathlib import Path

from pscmdp.harness import ExperimentConfig, default_workers, read_aggregate, run_suite
from pscmdp.svg import emit_figures

ROOT = Path(__file__).resolve().parents[1]


def summarize(suite) -> None:
    man = suite.manifest
    lv = man["reference_levels"]
    safe = lv["safe"]["reward_rate"] if lv["safe"] else float("nan")
    print(f"\n{man['config']['env']}  T={man['horizon']}  optimal {lv['optimal']['reward_rate']:.4f}  "
          f"safe {safe:.4f}  fast {lv['fast']['reward_rate']:.4f}")
    for algo in man["config"]["algorithms"]:
        path = suite.out_dir / "aggregate" / f"{algo}.csv"
        if not path.exists():
            print(f"  {algo:<18} no successful runs")
            continue
        cols = read_aggregate(path)
        print(f"  {algo:<18} reward {cols['mean_avg_reward'][-1]:.4f} +- {cols['std_avg_reward'][-1]:.4f}   "
              f"cost {cols['mean_avg_cost_0'][-1]:.4f} +- {cols['std_avg_cost_0'][-1]:.4f}")
    if not man["epoch_bound_ok"]:
        print("  epoch-count bound exceeded on some runs")
    if man["failures"]:
        print(f"  {len(man['failures'])} failed runs, see manifest.json")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--runs", type=int, help="override the number of runs")
    ap.add_argument("--horizon", type=int, help="override T")
    ap.add_argument("--out", type=Path, help="parent directory for results")
    ap.add_argument("--workers", type=int, default=default_workers())
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    paths = args.configs or sorted((ROOT / "configs").glob("*.toml"))
    for path in paths:
        cfg = ExperimentConfig.from_toml(path)
        changes = {k: v for k, v in (("runs", args.runs), ("horizon", args.horizon)) if v is not None}
        cfg = dataclasses.replace(cfg, **changes)
        out = (args.out / cfg.env) if args.out else Path(cfg.out_dir)
        suite = run_suite(cfg, out, workers=args.workers)
        emit_figures(out)
        summarize(suite)


if __name__ == "__main__":
    main()
