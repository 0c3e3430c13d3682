"""Command-line entry point: ``bogodisp <command> --config cfg.ini --out dir``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import FLOW_KINDS, ConfigError, load_config, run_experiment

# command -> (kinds it accepts, default kind, special runner mode)
COMMANDS = {
    "hartree": (("hartree_decay",), "hartree_decay", None),
    "kernels": (("kernel_decay",), "kernel_decay", None),
    "flow": (FLOW_KINDS, "sigma_dispersion", None),
    "oracle": (("fock_oracle",), "fock_oracle", None),
    "fit": (None, None, "fit"),
    "certify": (("certificates",), "certificates", None),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bogodisp", description="Hartree, pair-flow and Fock-oracle experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI experiment config")
        sp.add_argument("--out", required=True, help="output directory (replaced on success)")
        if name == "oracle":
            sp.add_argument("--dense", action="store_true", help="split-step vs dense matrix ODE instead of Fock space")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    kinds, default, mode = COMMANDS[args.command]
    try:
        cfg = load_config(args.config)
        if getattr(args, "dense", False):
            mode = "matrix_oracle"
        elif kinds is not None:
            if "kind" not in cfg.given:
                cfg.kind = default
            elif cfg.kind not in kinds:
                raise ConfigError("experiment.kind", f"command {args.command!r} runs {', '.join(kinds)}, not {cfg.kind!r}")
        summary = run_experiment(cfg, args.out, mode)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(summary.text(args.command), end="")
    return 0 if summary.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
