"""Command-line front end: ``strata run <config> --out <dir>`` and ``strata validate <config>``."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigParseError, config_checksum, parse_config, serialize_config
from .montecarlo import ConfigError, ExperimentConfig, ExperimentResult, run_experiment

RESULT_JSON = "result.json"
RESULT_CSV = "result.csv"
MANIFEST_JSON = "manifest.json"


def format_number(x) -> str:
    """17 significant digits; non-finite and missing values become ``null``."""
    if x is None:
        return "null"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written by ``format_number``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None or isinstance(obj, (bool, int, float)):
        return format_number(obj)
    if hasattr(obj, "item"):  # numpy scalar
        return format_number(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def result_csv(result: ExperimentResult) -> str:
    columns = []
    for row in result.rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    lines = [",".join(columns)]
    for row in result.rows:
        cells = []
        for key in columns:
            val = row.get(key)
            cells.append("" if val is None else format_number(val))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _atomic_write_all(out_dir: Path, files: dict[str, str]) -> None:
    """Write every file to a temporary name first, then rename them all."""
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            staged.append((tmp, out_dir / name))
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def run(config: ExperimentConfig, output_dir, workers=None) -> int:
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"{out} is not writable")
    except OSError as exc:
        print(f"error: invalid output directory {out}: {exc}", file=sys.stderr)
        return 2

    started = datetime.now(timezone.utc).isoformat()
    try:
        result = run_experiment(config, workers)
    except (ConfigError, ValueError) as exc:
        print(f"error: experiment failed: {exc}", file=sys.stderr)
        return 1
    finished = datetime.now(timezone.utc).isoformat()

    manifest = {
        "config_checksum": config_checksum(config),
        "library_version": __version__,
        "started": started,
        "finished": finished,
        "seed": config.base_seed,
        "outputs": [str(out / RESULT_JSON), str(out / RESULT_CSV), str(out / MANIFEST_JSON)],
    }
    files = {
        RESULT_JSON: dumps(result.to_dict()) + "\n",
        RESULT_CSV: result_csv(result),
        MANIFEST_JSON: dumps(manifest) + "\n",
    }
    try:
        _atomic_write_all(out, files)
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strata", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, help="override base_seed")
    p_run.add_argument("--workers", type=int, help="thread count (default: $STRATA_THREADS or all cores)")

    p_val = sub.add_parser("validate", help="parse and check a config file")
    p_val.add_argument("config")
    p_val.add_argument("--print", action="store_true", help="print the canonical form")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if getattr(args, "seed", None) is not None:
            config = config.replace(base_seed=args.seed)
    except ConfigParseError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        if args.print:
            sys.stdout.write(serialize_config(config))
        else:
            print(f"ok: {config.experiment}, {config.spec.num_groups} groups, d={config.spec.dim}")
        return 0
    return run(config, args.out, workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
