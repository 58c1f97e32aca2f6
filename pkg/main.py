"""
sagechain CLI - hybrid graph networks for supply-chain classification.
Subcommands: ingest, train, ablate, report. Run `python main.py <command> -h`.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

# Add utils to path
sys.path.append(str(Path(__file__).parent))

from command_executor import CommandExecutor
from command_specs import get_command_specs
from errors import EXIT_INPUT_ERROR, EXIT_OK, SageChainError

logger = logging.getLogger("sagechain")

_ARG_TYPES = {"STRING": str, "INTEGER": int, "NUMBER": float}


# ============= PARSER =============

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sagechain", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG (overrides SAGECHAIN_LOG_LEVEL)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for spec in get_command_specs():
        sub = subparsers.add_parser(spec["name"], help=spec["description"], description=spec["description"])
        required = set(spec["parameters"]["required"])
        for flag, prop in spec["parameters"]["properties"].items():
            dest = prop.get("field") or flag.replace("-", "_")
            kwargs = {"dest": dest, "help": prop["description"], "default": None}
            if prop["type_"] == "BOOLEAN":
                kwargs["action"] = "store_const"
                kwargs["const"] = True
            else:
                kwargs["type"] = _ARG_TYPES[prop["type_"]]
                if "choices" in prop:
                    kwargs["choices"] = prop["choices"]
            if flag in required:
                kwargs["required"] = True
            sub.add_argument(f"--{flag}", **kwargs)
    return parser


def configure_logging(verbose: int = 0):
    """Log to stderr; -v flags win over SAGECHAIN_LOG_LEVEL."""
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, os.getenv("SAGECHAIN_LOG_LEVEL", "INFO").upper(), logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


# ============= ENTRY POINT =============

def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    params: Dict = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    if args.command in ("train", "ablate") and args.verbose:
        params["verbose"] = args.verbose

    try:
        result = CommandExecutor().execute(args.command, params)
    except SageChainError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    if not result.get("success"):
        print(f"Error: {result.get('error')}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    print(result["text"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
