"""Command line entry point.

Verbs::

    robust-mcbf solve    CONFIG   # single instance, centralized solvers
    robust-mcbf admm     CONFIG   # distributed run(s) with traces
    robust-mcbf sweep    CONFIG   # Monte Carlo scenario from the config
    robust-mcbf validate CONFIG   # Monte Carlo outage histograms (fig1)

Exit status is 0 only if no trial hit a numerical failure; 2 on usage
errors.
"""

import argparse
import json
import logging
import sys

from .errors import InvalidInput
from .experiments import load_config, run_experiment

log = logging.getLogger("robust_mcbf")

_VERB_SCENARIO = {"solve": "single_solve", "admm": "admm_convergence", "validate": "fig1"}


def build_parser():
    p = argparse.ArgumentParser(prog="robust-mcbf", description="Robust multi-cell beamforming")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("solve", "admm", "sweep", "validate"):
        s = sub.add_parser(verb)
        s.add_argument("config", help="TOML experiment config")
        s.add_argument("--seed", type=int, default=None, help="override the base seed")
        s.add_argument("--output-dir", "-o", default=None)
        s.add_argument("--trials", type=int, default=None)
        s.add_argument("--workers", type=int, default=None)
        s.add_argument("--transport", choices=("loopback", "tcp"), default=None)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    over = {"seed": args.seed, "output_dir": args.output_dir, "trials": args.trials,
            "workers": args.workers, "transport": args.transport}
    try:
        if args.verb in _VERB_SCENARIO:
            over["scenario"] = _VERB_SCENARIO[args.verb]
        ec = load_config(args.config, **over)
        if args.verb == "sweep" and ec.scenario in _VERB_SCENARIO.values():
            log.info("sweep verb running scenario %s", ec.scenario)
        res = run_experiment(ec)
    except (InvalidInput, FileNotFoundError) as e:
        print(f"robust-mcbf: error: {e}", file=sys.stderr)
        return 2
    print(json.dumps({"scenario": res.scenario, "files": res.files,
                      "numerical_failures": res.failures}, indent=2))
    if res.failures:
        print(f"robust-mcbf: {res.failures} trial(s) hit numerical-failure", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
