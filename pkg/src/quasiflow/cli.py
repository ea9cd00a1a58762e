"""Command line entry point: ``quasiflow run|list-presets|validate``.

Exit status: 0 when every verdict passes, 1 when any fails, 2 for a
configuration error.  Output goes under ``$QUASIFLOW_OUTPUT`` (default ``runs``).
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import OUTPUT_ENV, ConfigError, build_config, load_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _load(args) -> list:
    cfgs = [load_config(path) for path in args.configs]
    cfgs += [build_config(name) for name in args.preset or []]
    if not cfgs:
        raise ConfigError("nothing to run: give config files or --preset NAME")
    return cfgs


def _run_one(cfg):
    from .experiments import run_experiment

    res = run_experiment(cfg)
    return cfg.preset, str(res.out), {k: v.passed for k, v in res.verdicts.items()}


def cmd_run(args) -> int:
    cfgs = _load(args)
    if args.jobs > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, cfgs))
    else:
        results = [_run_one(c) for c in cfgs]
    code = EXIT_OK
    for name, out, verdicts in results:
        for key, ok in verdicts.items():
            print(f"{'PASS' if ok else 'FAIL'}  {name}:{key}")
        print(f"-> {out}/manifest.json")
        if not all(verdicts.values()):
            code = EXIT_FAIL
    return code


def cmd_list(args) -> int:
    from .experiments import PRESETS

    width = max(map(len, PRESETS))
    for name in sorted(PRESETS):
        print(f"{name:<{width}}  {PRESETS[name].description}")
    return EXIT_OK


def cmd_validate(args) -> int:
    for cfg in _load(args):
        print(f"ok  {cfg.preset}  domain={cfg.domain} resolution={cfg.resolution} "
              f"p={cfg.p:g} a={cfg.a} f={cfg.f} -> {cfg.output_path()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="quasiflow", description="Quasilinear p-Laplacian flow experiments.",
        epilog=f"Results are written under ${OUTPUT_ENV} (default ./runs).")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiments from config files or preset names")
    run.add_argument("configs", nargs="*", help="INI config files")
    run.add_argument("--preset", action="append", help="run a preset with its defaults")
    run.add_argument("-j", "--jobs", type=int, default=1,
                     help="run independent experiments in parallel processes")
    run.set_defaults(func=cmd_run)

    ls = sub.add_parser("list-presets", help="list registered experiments")
    ls.set_defaults(func=cmd_list)

    val = sub.add_parser("validate", help="parse and validate config files")
    val.add_argument("configs", nargs="*")
    val.add_argument("--preset", action="append")
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
