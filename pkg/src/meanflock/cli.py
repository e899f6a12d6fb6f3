"""Command-line entry point.

Exit codes: 0 all verdicts pass, 2 some verdict failed, 1 configuration or
runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config, schema_lines
from .harness import list_models, run_from_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="meanflock",
        description="Mean-field particle simulations with common and individual noise",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config", help="path to a key = value config file")
    run_p.add_argument(
        "--output-dir", default=None, help="override the config's output_dir"
    )

    sub.add_parser("models", help="list available kernel models")

    val_p = sub.add_parser("validate", help="check a config without running it")
    val_p.add_argument("config", help="path to a key = value config file")
    val_p.add_argument("--schema", action="store_true", help="also print the schema")

    args = parser.parse_args(argv)

    if args.command == "run":
        return run_from_path(args.config, output_dir=args.output_dir)

    if args.command == "models":
        for name, doc in sorted(list_models().items()):
            print(f"{name}\n    {doc}")
        return 0

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"invalid: {exc}", file=sys.stderr)
            return 1
        except OSError as exc:
            print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
            return 1
        print(f"valid: experiment={cfg.kind} seeds={cfg.seeds()}")
        if args.schema:
            print("\nschema:")
            for line in schema_lines():
                print("  " + line)
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
