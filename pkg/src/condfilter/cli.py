"""Command-line interface: calibrate, filter, simulate and metrics.

Configuration is resolved as defaults < ``--config`` file < ``CONDFILTER_*``
environment variables < command-line flags.  The config file is flat
``key = value`` text with ``#`` comments; keys are the :class:`FilterConfig`
field names (``lambda`` and ``seed`` are accepted as aliases of ``lam`` and
``rng_seed``).  Every output is accompanied by ``<output>.manifest.json``.

Exit codes: 0 success, 1 validation or configuration error, 2 I/O error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from collections import Counter
from dataclasses import asdict, fields
from typing import Mapping, Optional

import numpy as np

from . import __version__
from .evalsim import ScenarioSpec, empirical_coverage, realized_loss, run_coverage_study, selection_prf
from .io import dumps, file_digest, read_decisions, read_records, write_decisions, write_json
from .kernel import KernelSpec
from .kqr import SolverError
from .model import ConfigError, DatasetError, FilterConfig, validate_dataset
from .pipeline import Calibration, apply_calibration, calibrate, parse_strategy

ENV_PREFIX = "CONDFILTER_"
ARTIFACT_FORMAT = "condfilter.calibration/1"
ALIASES = {"lambda": "lam", "seed": "rng_seed"}
_FIELDS = {f.name for f in fields(FilterConfig)}
# fields baked into calibration scores; a filter run may not change them
_SCORE_FIELDS = ("lam", "rho", "score_convention")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3


# -- configuration -------------------------------------------------------------

def _coerce(key: str, text: str):
    text = text.strip()
    if key == "bandwidth":
        return text if text == "auto" else float(text)
    if key in ("rho", "rng_seed"):
        return int(text)
    if key == "compute_gap":
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if key in ("randomization", "score_convention"):
        return text
    return float(text)


def _canonical(key: str) -> str:
    key = ALIASES.get(key, key)
    if key not in _FIELDS:
        raise KeyError(key)
    return key


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; errors name the offending line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            name = _canonical(key)
        except KeyError:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}") from None
        try:
            out[name] = _coerce(name, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def env_overrides(environ: Mapping[str, str]) -> dict:
    out = {}
    for var in sorted(environ):
        if not var.startswith(ENV_PREFIX) or var == ENV_PREFIX + "WORKERS":
            continue
        key = var[len(ENV_PREFIX):].lower()
        try:
            name = _canonical(key)
            out[name] = _coerce(name, environ[var])
        except KeyError:
            raise ConfigError(f"environment: unknown variable {var}") from None
        except ValueError as exc:
            raise ConfigError(f"environment: bad value for {var}: {exc}") from None
    return out


def flag_overrides(args: argparse.Namespace) -> dict:
    out = {}
    for flag, name in (("alpha", "alpha"), ("rho", "rho"), ("lam", "lam"), ("gamma", "gamma"),
                       ("bandwidth", "bandwidth"), ("seed", "rng_seed")):
        value = getattr(args, flag, None)
        if value is not None:
            out[name] = _coerce(name, value)
    if getattr(args, "deterministic", False):
        out["randomization"] = "deterministic"
    return out


def resolve_config(args: argparse.Namespace, environ: Mapping[str, str], base: Optional[dict] = None) -> FilterConfig:
    values = dict(base or {})
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), args.config))
    values.update(env_overrides(environ))
    try:
        values.update(flag_overrides(args))
    except ValueError as exc:
        raise ConfigError(f"bad flag value: {exc}") from None
    return FilterConfig(**values)


def resolve_workers(args: argparse.Namespace, environ: Mapping[str, str]) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    if ENV_PREFIX + "WORKERS" in environ:
        try:
            return max(1, int(environ[ENV_PREFIX + "WORKERS"]))
        except ValueError:
            raise ConfigError(f"environment: {ENV_PREFIX}WORKERS must be an integer") from None
    return os.cpu_count() or 1


# -- artifacts -----------------------------------------------------------------

def calibration_to_json(calib: Calibration) -> dict:
    return {
        "format": ARTIFACT_FORMAT,
        "config": asdict(calib.config),
        "kernel": {"family": calib.kernel.family, "bandwidth": calib.kernel.bandwidth},
        "records": [
            {"sample_id": sid, "embedding": list(map(float, emb)), "score": float(score)}
            for sid, emb, score in zip(calib.sample_ids, calib.embeddings, calib.scores)
        ],
    }


def calibration_from_json(obj: dict, config: FilterConfig) -> Calibration:
    if obj.get("format") != ARTIFACT_FORMAT:
        raise DatasetError([f"not a calibration artifact (format {obj.get('format')!r})"])
    recs = obj["records"]
    if not recs:
        raise DatasetError(["calibration artifact has no records"])
    emb = np.array([r["embedding"] for r in recs], dtype=float)
    scores = np.array([r["score"] for r in recs], dtype=float)
    if emb.ndim != 2:
        raise DatasetError(["calibration embeddings have inconsistent dimensions"])
    kernel = KernelSpec(float(obj["kernel"]["bandwidth"]), obj["kernel"].get("family", "rbf"))
    if config.bandwidth != obj["config"].get("bandwidth") and config.bandwidth != "auto":
        kernel = KernelSpec(float(config.bandwidth))
    return Calibration([r["sample_id"] for r in recs], emb, scores, kernel, config)


def write_manifest(out_path: str, command: str, config: Optional[FilterConfig], inputs, extra=None) -> None:
    manifest = {
        "command": command,
        "config": asdict(config) if config is not None else None,
        "inputs": {p: file_digest(p) for p in inputs},
        "outputs": [out_path],
        "seed": config.rng_seed if config is not None else None,
        "version": __version__,
    }
    manifest.update(extra or {})
    write_json(out_path + ".manifest.json", manifest)


# -- commands ------------------------------------------------------------------

def cmd_calibrate(args, environ) -> int:
    config = resolve_config(args, environ)
    cal = validate_dataset(read_records(args.cal), require_gold=True)
    calib = calibrate(cal, config)
    write_json(args.out, calibration_to_json(calib))
    write_manifest(args.out, "calibrate", config, [args.cal] + ([args.config] if args.config else []))
    return EXIT_OK


def cmd_filter(args, environ) -> int:
    with open(args.artifact, encoding="utf-8") as fh:
        try:
            artifact = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError([f"{args.artifact}: {exc}"]) from None
    try:
        base = dict(artifact["config"])
    except (KeyError, TypeError):
        raise DatasetError([f"{args.artifact}: missing config"]) from None
    config = resolve_config(args, environ, base)
    for name in _SCORE_FIELDS:
        if getattr(config, name) != base.get(name):
            raise ConfigError(
                f"{name} differs from the calibration artifact ({getattr(config, name)!r} vs {base.get(name)!r}); "
                "recalibrate instead"
            )
    strategy = parse_strategy(args.strategy)
    calib = calibration_from_json(artifact, config)
    aug = validate_dataset(read_records(args.aug))
    bad = [r.sample_id for r in aug if r.dim != calib.dim]
    if bad:
        raise DatasetError([f"{sid}: dimension mismatch (calibration d={calib.dim})" for sid in bad])
    decisions = apply_calibration(calib, aug, strategy, resolve_workers(args, environ))
    write_decisions(args.out, decisions)
    inputs = [args.artifact, args.aug] + ([args.config] if args.config else [])
    write_manifest(args.out, "filter", config, inputs, {"strategy": str(strategy)})
    return EXIT_OK


def load_scenario(path: str) -> tuple[ScenarioSpec, int]:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    obj = dict(obj)
    replicates = int(obj.pop("replicates", 1))
    known = {f.name for f in fields(ScenarioSpec)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown scenario keys {unknown}")
    try:
        return ScenarioSpec(**obj), replicates
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_simulate(args, environ) -> int:
    config = resolve_config(args, environ)
    spec, replicates = load_scenario(args.scenario)
    if args.replicates is not None:
        replicates = args.replicates
    strategies = [parse_strategy(s) for s in args.strategy.split(",") if s.strip()]
    reports = run_coverage_study(spec, replicates, strategies, config, resolve_workers(args, environ))
    write_json(args.out, {"scenario": asdict(spec), "replicates": replicates, "reports": reports})
    inputs = [args.scenario] + ([args.config] if args.config else [])
    write_manifest(args.out, "simulate", config, inputs, {"strategy": [str(s) for s in strategies]})
    return EXIT_OK


def cmd_metrics(args, environ) -> int:
    config = resolve_config(args, environ)
    decisions = read_decisions(args.decisions)
    gold_records = validate_dataset(read_records(args.gold), require_gold=True)
    hidden = {r.sample_id: {g.gen_id: g.gold for g in r.generations} for r in gold_records}
    try:
        prf = selection_prf(decisions, hidden, config.lam)
        coverage = empirical_coverage(decisions, hidden, config.lam, config.rho)
    except KeyError as exc:
        raise DatasetError([f"id mismatch: {exc.args[0]}"]) from None
    hist = Counter(realized_loss(d, hidden[d.sample_id], config.lam) for d in decisions)
    report = {
        "n_records": len(decisions),
        "lambda": config.lam,
        "rho": config.rho,
        "coverage": coverage,
        "precision": prf.precision,
        "recall": prf.recall,
        "f1": prf.f1,
        "prf_flags": list(prf.flags),
        "loss_histogram": {str(k): hist[k] for k in sorted(hist)},
    }
    write_json(args.out, report)
    write_manifest(args.out, "metrics", config, [args.decisions, args.gold] + ([args.config] if args.config else []))
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--alpha", help="miscoverage level in (0,1)")
    p.add_argument("--rho", help="tolerated below-threshold generations per sample")
    p.add_argument("--lambda", dest="lam", help="gold quality threshold")
    p.add_argument("--gamma", help="RKHS regularization")
    p.add_argument("--bandwidth", help="RBF bandwidth or 'auto'")
    p.add_argument("--seed", help="randomization seed")
    p.add_argument("--workers", type=int, help="parallel workers (default: CPU count)")
    p.add_argument("--deterministic", action="store_true", help="use the non-randomized cutoff event")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condfilter", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"condfilter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="score a gold-labeled calibration set")
    p.add_argument("--cal", required=True, help="calibration records (JSONL or CSV)")
    p.add_argument("--out", required=True, help="calibration artifact (JSON)")
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("filter", help="filter augmentation records with a calibration artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--aug", required=True, help="augmentation records (JSONL or CSV)")
    p.add_argument("--strategy", default="conditional_cp", help="e.g. conditional_cp, hybrid:0.5")
    p.add_argument("--out", required=True, help="decisions (JSONL)")
    _common(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", help="coverage study on a synthetic scenario")
    p.add_argument("--scenario", required=True, help="JSON object of scenario fields plus 'replicates'")
    p.add_argument("--strategy", default="marginal_cp,conditional_cp", help="comma-separated strategies")
    p.add_argument("--replicates", type=int)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="selection metrics of decisions against gold scores")
    p.add_argument("--decisions", required=True)
    p.add_argument("--gold", required=True, help="records with gold scores")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None, environ: Optional[Mapping[str, str]] = None) -> int:
    args = build_parser().parse_args(argv)
    environ = os.environ if environ is None else environ
    try:
        return args.func(args, environ)
    except SolverError as exc:
        print(f"error: {exc} {dumps(_jsonable(exc.diagnostics))}", file=sys.stderr)
        return EXIT_SOLVER
    except DatasetError as exc:
        print("error: invalid data:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def _jsonable(d: dict) -> dict:
    return {k: (v if not isinstance(v, float) or math.isfinite(v) else str(v)) for k, v in d.items()}


if __name__ == "__main__":
    sys.exit(main())
