#!/usr/bin/env python3
"""Start the live HTTP service with a config file (default: config.example.yaml)."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from expertloop.cli import main  # noqa: E402

if __name__ == "__main__":
    args = sys.argv[1:]
    if not args:
        args = ["serve", "--config", str(Path(__file__).resolve().parents[1] / "config.example.yaml")]
    elif args[0] != "serve":
        args = ["serve", *args]
    raise SystemExit(main(args))
