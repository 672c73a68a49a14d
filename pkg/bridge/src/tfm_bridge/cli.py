"""Bridge command line: ``tfm-bridge serve --endpoint <addr> --model <name>``."""

from __future__ import annotations

import argparse
import sys

from .models import ModelError, load_model
from .server import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tfm-bridge")
    sub = parser.add_subparsers(dest="command", required=True)
    p_serve = sub.add_parser("serve", help="serve predictions over the line protocol")
    p_serve.add_argument("--endpoint", required=True,
                         help="tcp:HOST:PORT or stdio:")
    p_serve.add_argument("--model", choices=("tabpfn", "tabdpt", "echo"),
                         default="echo")
    args = parser.parse_args(argv)
    try:
        model = load_model(args.model)
    except ModelError as exc:
        print(f"cannot load model: {exc}", file=sys.stderr)
        return 1
    try:
        serve(args.endpoint, model)
    except KeyboardInterrupt:
        pass
    except (OSError, ValueError) as exc:
        print(f"serve failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
