"""Command line: ``fkpz run <config>``, ``fkpz scan <config> --param P --values ...``.

Exit codes: 0 success, 2 a verified negative outcome (divergence,
nonexistence, blow-up), 1 configuration or software error.
"""

from __future__ import annotations

import argparse
import math
import sys
import traceback
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import SWEEPABLE, ExperimentConfig, from_dict, load_config, override
from .errors import ConfigInvalid, FkpzError
from .experiments import EXIT_ERROR, EXIT_OK, Outcome, run_experiment
from .kpz import Thresholds
from .output import SCHEMA_VERSION, write_csv, write_json_atomic
from .parallel import thread_map

MANIFEST = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _manifest(cfg: ExperimentConfig, outcome: Outcome, started: str) -> dict:
    return {
        "config": cfg.raw,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "verdict": outcome.verdict,
        "exit_code": outcome.exit_code,
        "headline": outcome.headline,
        "files": outcome.files,
        "csv_schema_version": SCHEMA_VERSION,
    }


def execute(cfg: ExperimentConfig) -> tuple[Outcome, dict]:
    """Run one configuration, write its manifest and return both.

    Package errors are caught and reported as verdict ``error`` with exit 1.
    """
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    try:
        outcome = run_experiment(cfg, out)
    except FkpzError as exc:
        outcome = Outcome("error", EXIT_ERROR, {"error": f"{type(exc).__name__}: {exc}"})
    manifest = _manifest(cfg, outcome, started)
    write_json_atomic(out / MANIFEST, manifest)
    return outcome, manifest


def cmd_run(path: str) -> int:
    cfg = load_config(path)
    outcome, _ = execute(cfg)
    _report(cfg.kind, outcome, cfg.output)
    return outcome.exit_code


def _report(label: str, outcome: Outcome, out: Path) -> None:
    stream = sys.stderr if outcome.exit_code == EXIT_ERROR else sys.stdout
    extra = f" ({outcome.headline['error']})" if "error" in outcome.headline else ""
    print(f"{label}: {outcome.verdict}{extra} -> {out}", file=stream)


def parse_values(text: str) -> list[float]:
    """Comma separated numbers; an empty list is a configuration error."""
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise ConfigInvalid("sweep.values", "empty sweep list")
    try:
        return [float(v) for v in items]
    except ValueError:
        raise ConfigInvalid("sweep.values", f"not a list of numbers: {text!r}") from None


@dataclass
class _SubRun:
    value: float
    outcome: Outcome
    classification: str


def _classification(cfg: ExperimentConfig) -> str:
    if cfg.physics.alpha is None:
        return ""
    return Thresholds(cfg.grid.dimension, cfg.physics.s).classify(cfg.physics.alpha)


def _convergence_rows(values: Sequence[float], primary: Sequence[float]) -> list[tuple]:
    """Successive differences of the headline number and the observed order ``log2(d_k / d_{k+1})``."""
    order = sorted(range(len(values)), key=lambda i: -values[i])
    hs = [values[i] for i in order]
    q = [primary[i] for i in order]
    diffs = [abs(b - a) for a, b in zip(q[:-1], q[1:])] + [math.nan]
    rows = []
    for k, (h, v) in enumerate(zip(hs, q)):
        rate = math.nan
        if k + 1 < len(diffs) and diffs[k] > 0 and diffs[k + 1] > 0:
            rate = math.log(diffs[k] / diffs[k + 1]) / math.log(hs[k] / hs[k + 1])
        rows.append((h, v, diffs[k], rate))
    return rows


def cmd_scan(path: str, param: str, values_text: str) -> int:
    if param not in SWEEPABLE:
        raise ConfigInvalid("sweep.param", f"must be one of {tuple(SWEEPABLE)}, got {param!r}")
    values = parse_values(values_text)
    base = load_config(path)
    root = Path(base.output)
    subs: list[ExperimentConfig] = []
    for v in values:
        raw = override(base.raw, param, v)
        raw["output"] = str((root / f"{param}-{v:g}").resolve())
        subs.append(from_dict(raw, Path(path).parent))

    def one(item: tuple[float, ExperimentConfig]) -> _SubRun:
        value, cfg = item
        outcome, _ = execute(cfg)
        return _SubRun(value, outcome, _classification(cfg))

    results = thread_map(one, list(zip(values, subs)))
    root.mkdir(parents=True, exist_ok=True)
    started = _now()
    rows = [(param, r.value, r.outcome.exit_code, r.outcome.verdict, r.classification, r.outcome.primary) for r in results]
    files = [write_csv(root, "sweep_summary", rows)]
    if param == "h":
        files.append(write_csv(root, "convergence", _convergence_rows(values, [r.outcome.primary for r in results])))
    verdicts = {f"{v:g}": r.outcome.verdict for v, r in zip(values, results)}
    failed = any(r.outcome.exit_code == EXIT_ERROR for r in results)
    summary = Outcome(
        "sweep finished" if not failed else "sweep had errors",
        EXIT_ERROR if failed else EXIT_OK,
        {"param": param, "values": values, "verdicts": verdicts, "subruns": [str(c.output) for c in subs]},
        files,
    )
    write_json_atomic(root / MANIFEST, _manifest(base, summary, started))
    for v, r in zip(values, results):
        _report(f"{param}={v:g}", r.outcome, root)
    return summary.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fkpz", description="Fractional KPZ experiments.")
    parser.add_argument("--version", action="version", version=f"fkpz {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment configuration")
    run.add_argument("config")
    scan = sub.add_parser("scan", help="sweep one parameter over a list of values")
    scan.add_argument("config")
    scan.add_argument("--param", required=True, help=f"one of {', '.join(SWEEPABLE)}")
    scan.add_argument("--values", required=True, help="comma separated values, e.g. 1.1,1.5,2")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config)
        return cmd_scan(args.config, args.param, args.values)
    except ConfigInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception:
        traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
