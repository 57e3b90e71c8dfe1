"""Command-line experiment runner.

    ntk-lab <subcommand> [--config FILE] [--out DIR] [--seed S]
                         [--set key=value ...] [--full] [--jobs N]

Subcommands: ntk-convergence, kernel-regression, pca-convergence,
pd-certificate. Configuration starts from per-command defaults, is overlaid
by the flat key-value config file, then by --set pairs; --seed and --full are
shorthands. Every run writes its outputs plus a manifest.json that echoes
the effective configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    KernelRegressionConfig,
    NtkConvergenceConfig,
    PcaConvergenceConfig,
    PdCertificateConfig,
    _apply_mapping,
    parse_config_file,
    run_kernel_regression,
    run_ntk_convergence,
    run_pca_convergence,
    run_pd_certificate,
)

_COMMANDS = {
    "ntk-convergence": (NtkConvergenceConfig, run_ntk_convergence),
    "kernel-regression": (KernelRegressionConfig, run_kernel_regression),
    "pca-convergence": (PcaConvergenceConfig, run_pca_convergence),
    "pd-certificate": (PdCertificateConfig, run_pd_certificate),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntk-lab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="flat key-value config file")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default runs/<command>)")
        p.add_argument("--seed", type=int, default=None, help="base seed")
        p.add_argument("--full", action="store_true",
                       help="source-scale parameters instead of workstation defaults")
        p.add_argument("--jobs", type=int, default=1,
                       help="process-pool width for (width, seed) fan-out")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
    return parser


def resolve_config(command: str, args) -> object:
    cfg_cls, _ = _COMMANDS[command]
    cfg = cfg_cls()
    if args.config is not None:
        _apply_mapping(cfg, parse_config_file(args.config))
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value
    if pairs:
        _apply_mapping(cfg, pairs)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.full:
        cfg.resolve_full()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out if args.out is not None else Path("runs") / args.command
    _, runner = _COMMANDS[args.command]
    result = runner(cfg, out_dir, jobs=args.jobs)
    print(json.dumps({"command": args.command, "out": str(out_dir),
                      "summary": _summary(args.command, result)}, indent=2))
    return 0


def _summary(command: str, result: dict) -> dict:
    if command == "pd-certificate":
        return {"verdict": result["verdict"], "gram_min_eig": result["gram_min_eig"]}
    if command == "pca-convergence":
        return {"eigenvalues": result.get("eigenvalues")}
    return {"outputs": result.get("outputs")}


if __name__ == "__main__":
    sys.exit(main())
