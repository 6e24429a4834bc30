"""Command line interface: ``run``, ``generate`` and ``verify`` subcommands."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, io

VERIFY_TASKS = ("verify-certificates", "verify-asymptotics", "verify-pairing")


def _parser():
    ap = argparse.ArgumentParser(prog="cheegerflow", description="Cheeger energy gradient flows on graphs and grids.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="64-bit seed, overrides the config")
        p.add_argument("--out", help="output directory, overrides the config")
        p.add_argument("--p", type=float, help="energy exponent")
        p.add_argument("--tau", type=float, help="time step")
        p.add_argument("--t-final", type=float, dest="t_final", help="final time")

    common(sub.add_parser("run", help="run the configured tasks"))
    common(sub.add_parser("verify", help="run only verification tasks (all of them if none configured)"))

    g = sub.add_parser("generate", help="write a generated space file")
    g.add_argument("--config", help="generator spec (JSON object with GeneratorSpec fields)")
    g.add_argument("--kind", choices=harness.KINDS)
    g.add_argument("--size", type=int)
    g.add_argument("--weights", dest="weight_law", choices=("unit", "uniform"))
    g.add_argument("--measure", dest="measure_law", choices=("unit", "uniform"))
    g.add_argument("--sigma", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="space file to write")
    return ap


def _load_config(args):
    cfg = harness.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = str(Path(args.out).resolve())
    for key in ("p", "tau", "t_final"):
        val = getattr(args, key)
        if val is not None:
            cfg.flow[key] = val
    # re-validate after overrides
    return harness.ExperimentConfig(cfg.space, cfg.tasks, cfg.flow, cfg.u0, cfg.out, cfg.seed,
                                    cfg.options, cfg.base)


def _generate(args):
    spec = {}
    if args.config:
        try:
            spec = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise harness.ConfigError(f"cannot read generator spec: {exc}") from None
        spec = spec.get("generator", spec)
    for key in ("kind", "size", "weight_law", "measure_law", "sigma"):
        val = getattr(args, key)
        if val is not None:
            spec[key] = val
    try:
        gs = harness.GeneratorSpec(**spec)
    except TypeError as exc:
        raise harness.ConfigError(f"invalid generator spec: {exc}") from None
    space = harness.generate(gs, args.seed)
    io.save_space(space, args.out)
    print(json.dumps({"out": args.out, "nodes": space.n_nodes, "connected": harness.is_connected(space)}))
    return harness.EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            return _generate(args)
        cfg = _load_config(args)
        if args.command == "verify":
            tasks = [t for t in cfg.tasks if t in VERIFY_TASKS] or list(VERIFY_TASKS)
            cfg = harness.ExperimentConfig(cfg.space, tasks, cfg.flow, cfg.u0, cfg.out, cfg.seed,
                                           cfg.options, cfg.base)
        result = harness.run(cfg)
    except harness.ConfigError as exc:
        print(json.dumps({"status": harness.EXIT_CONFIG, "error": str(exc)}), file=sys.stderr)
        return harness.EXIT_CONFIG
    sys.stdout.write(result.summary())
    return result.status


if __name__ == "__main__":
    sys.exit(main())
