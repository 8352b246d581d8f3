"""Run one or more experiment configs and print their summaries.

    python3 scripts/run_experiments.py                      # every config in scripts/configs
    python3 scripts/run_experiments.py scripts/configs/fig1.toml --trials 20
"""

import argparse
import glob
import json
import os
import time

from robust_mcbf.experiments import load_config, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("configs", nargs="*")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--output-root", default=None, help="prefix for every output_dir")
    args = ap.parse_args()
    paths = args.configs or sorted(glob.glob(os.path.join(HERE, "configs", "*.toml")))
    for path in paths:
        ec = load_config(path, trials=args.trials, workers=args.workers)
        if args.output_root:
            ec.output_dir = os.path.join(args.output_root, os.path.basename(ec.output_dir))
        t0 = time.time()
        res = run_experiment(ec)
        print(f"# {os.path.basename(path)}  ({time.time() - t0:.0f} s, "
              f"{res.failures} numerical failures)")
        print(json.dumps(res.summary, indent=1, default=str))


if __name__ == "__main__":
    main()
