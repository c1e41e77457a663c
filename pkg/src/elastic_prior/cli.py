"""Command-line interface: ``calibrate``, ``analyze`` and ``simulate``.

Configs are JSON files; unknown keys are rejected before any computation.
Relative paths inside a config resolve against the config's directory.
Reports are written as key-sorted JSON with floats at 17 significant
digits, so equal inputs give byte-identical output.

Exit codes: 0 success, 2 config error, 3 data error, 4 calibration infeasible.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .inference import (
    FLAT,
    BetaParams,
    NormalParams,
    binary_elastic_prior,
    binary_posterior,
    normal_elastic_prior,
    normal_posterior,
    survival_elastic_prior,
)
from .simulator import (
    KINDS,
    Scenario,
    TrialDesign,
    calibrate_design,
    make_model,
    operating_characteristics,
    run_trial,
)
from .calibration import grid_search
from .types import (
    BinarySummary,
    CalibrationInfeasible,
    CalibrationSpec,
    DataError,
    LogisticElastic,
    NormalSummary,
    StepElastic,
    SurvivalData,
    survival_sufficient_stats,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4
FILE_KINDS = ("binary", "normal", "survival", "map-normal")
PRIOR_KEYS = {"alpha0", "beta0", "kappa", "upsilon", "beta_prior_sd", "tau_scale", "map_R", "map_seed",
              "use_covariates", "covariate_deltas", "weights"}


class ConfigError(ValueError):
    pass


# -- JSON ---------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r} cannot be serialized")
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k), ensure_ascii=False) + ": " + _encode(obj[k], indent, level + 1) for k in sorted(obj, key=str)]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + pad + ("," + pad).join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Canonical JSON: sorted keys, 17 significant digits, trailing newline."""
    return _encode(obj, indent, 0) + "\n"


def cut_to_json(d: float):
    return "inf" if math.isinf(d) else float(d)


def cut_from_json(d) -> float:
    if d in ("inf", "Infinity", None):
        return math.inf
    if isinstance(d, bool) or not isinstance(d, (int, float)):
        raise ConfigError(f"invalid cut point {d!r}")
    return float(d)


# -- config helpers -----------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def check_keys(d: dict, allowed, where: str, required=()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {', '.join(missing)}")


def _int(v, name, lo=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}")
    return v


def calibration_spec(d: Optional[dict], seed: int) -> CalibrationSpec:
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(CalibrationSpec)} - {"seed"}
    check_keys(d, names, "calibration", required=("delta", "effect"))
    for k in ("q0_grid", "q1_grid"):
        if k in d:
            d[k] = tuple(d[k])
    try:
        return CalibrationSpec(seed=seed, **d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid calibration settings: {exc}")


def prior_options(d: Optional[dict]) -> dict:
    d = dict(d or {})
    check_keys(d, PRIOR_KEYS, "prior")
    return d


def resolve(base: Path, p) -> Path:
    if not isinstance(p, str):
        raise ConfigError(f"expected a file path, got {p!r}")
    q = Path(p)
    return q if q.is_absolute() else base / q


def endpoint_of(cfg: dict, allowed=KINDS) -> str:
    kind = cfg.get("endpoint")
    if kind not in allowed:
        raise ConfigError(f"endpoint must be one of {', '.join(allowed)}")
    return kind


def parse_cuts(cfg: dict) -> tuple:
    if "cuts" not in cfg:
        raise ConfigError("survival endpoint needs 'cuts'")
    cuts = tuple(cut_from_json(c) for c in cfg["cuts"])
    if not cuts:
        raise ConfigError("cuts must be non-empty")
    return cuts


# -- datasets -----------------------------------------------------------------


def read_dataset(path: Path, kind: str, cuts=None):
    """Parse a CSV dataset; the header decides between row and summary form."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = tuple(c.strip().lower() for c in rows[0])
    body = rows[1:]
    try:
        cols = [np.asarray([float(r[i]) for r in body]) for i in range(len(header))]
    except (ValueError, IndexError):
        raise DataError(f"{path}: non-numeric or ragged rows")
    if kind == "binary":
        if header == ("y",):
            return BinarySummary.from_raw(cols[0])
        if header == ("n", "responders"):
            return BinarySummary(*_summary_row(path, cols, int))
    elif kind in ("normal", "map-normal"):
        if header == ("y",):
            return NormalSummary.from_raw(cols[0])
        if header == ("n", "mean", "sd"):
            n, mean, sd = _summary_row(path, cols, float)
            if n != int(n):
                raise DataError(f"{path}: n must be an integer")
            return NormalSummary(int(n), mean, sd)
    elif kind == "survival":
        if header == ("time", "event"):
            if not body:
                raise DataError(f"{path}: no observations")
            if np.any(cols[1] != np.round(cols[1])):
                raise DataError(f"{path}: event must be 0 or 1")
            return SurvivalData(tuple(cols[0]), tuple(int(e) for e in cols[1]), tuple(cuts))
    raise DataError(f"{path}: header {','.join(header)!r} does not match a {kind} dataset")


def _summary_row(path, cols, cast):
    if len(cols[0]) != 1:
        raise DataError(f"{path}: summary form needs exactly one data row")
    vals = [float(c[0]) for c in cols]
    if cast is int:
        if any(v != int(v) for v in vals):
            raise DataError(f"{path}: counts must be integers")
        return [int(v) for v in vals]
    return vals


def read_historical(base: Path, cfg: dict, kind: str, cuts):
    h = cfg.get("historical")
    if h is None:
        raise ConfigError("missing key: historical")
    if kind == "map-normal":
        if not isinstance(h, list) or len(h) < 2:
            raise ConfigError("map-normal historical must list at least two files")
        return [read_dataset(resolve(base, p), kind) for p in h]
    return read_dataset(resolve(base, h), kind, cuts)


# -- elastic function records -------------------------------------------------


def elastic_to_json(f) -> dict:
    if isinstance(f, LogisticElastic):
        return {"form": "logistic", "a": f.a, "b": f.b, "c": f.c}
    if isinstance(f, StepElastic):
        return {"form": "step", "threshold": f.threshold}
    return {"form": "none"}


def elastic_from_json(d: dict):
    form = d.get("form")
    try:
        if form == "logistic":
            return LogisticElastic(float(d["a"]), float(d["b"]), float(d.get("c", 1.0)))
        if form == "step":
            return StepElastic(float(d["threshold"]))
        if form == "none":
            return None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid elastic record in artifact: {exc}")
    raise ConfigError(f"unknown elastic form {form!r} in artifact")


# -- commands -----------------------------------------------------------------

CALIBRATE_KEYS = {"endpoint", "historical", "elastic", "n_c", "n_t", "calibration", "prior", "cuts", "seed", "threads"}


def cmd_calibrate(cfg: dict, base: Path, seed: int, threads: int) -> dict:
    check_keys(cfg, CALIBRATE_KEYS, "config", required=("endpoint", "historical", "n_c", "n_t", "calibration"))
    kind = endpoint_of(cfg, FILE_KINDS)
    elastic_kind = cfg.get("elastic", "logistic")
    if elastic_kind not in ("logistic", "step"):
        raise ConfigError("elastic must be 'logistic' or 'step'")
    n_c, n_t = _int(cfg["n_c"], "n_c", 2), _int(cfg["n_t"], "n_t", 2)
    spec = calibration_spec(cfg["calibration"], seed)
    options = prior_options(cfg.get("prior"))
    cuts = parse_cuts(cfg) if kind == "survival" else None
    historical = read_historical(base, cfg, kind, cuts)
    model = make_model(kind, historical, n_c, options)
    res = grid_search(spec, model, n_c, n_t, elastic_kind, threads)
    out = {
        "endpoint": kind,
        "elastic": elastic_to_json(res.elastic),
        "q0": res.q0,
        "q1": res.q1,
        "cutoff": res.cutoff,
        "rho": res.rho,
        "psi": res.psi,
        "utility": res.utility,
        "fallback_T": res.fallback_T,
        "n_c": n_c,
        "n_t": n_t,
        "n_h": float(model.n_h),
        "seed": seed,
        "prior": options,
        "calibration": _spec_json(spec),
        "diagnostics": res.diagnostics,
        "version": __version__,
    }
    if cuts is not None:
        out["cuts"] = [cut_to_json(c) for c in cuts]
    return out


def _spec_json(spec: CalibrationSpec) -> dict:
    d = dataclasses.asdict(spec)
    for k in ("q0_grid", "q1_grid"):
        d[k] = list(d[k])
    return d


ANALYZE_KEYS = {"artifact", "endpoint", "historical", "control", "treatment", "sampler", "seed", "threads"}


def cmd_analyze(cfg: dict, base: Path, seed: int, threads: int) -> dict:
    check_keys(cfg, ANALYZE_KEYS, "config", required=("artifact", "historical", "control", "treatment"))
    art = load_config(resolve(base, cfg["artifact"]))
    kind = art.get("endpoint")
    if kind not in FILE_KINDS:
        raise ConfigError("artifact has no valid endpoint")
    if "endpoint" in cfg and cfg["endpoint"] != kind:
        raise DataError(f"endpoint mismatch: config says {cfg['endpoint']!r}, artifact is {kind!r}")
    sampler = cfg.get("sampler", "collapsed")
    if sampler not in ("collapsed", "gibbs"):
        raise ConfigError("sampler must be 'collapsed' or 'gibbs'")
    cuts = tuple(cut_from_json(c) for c in art["cuts"]) if kind == "survival" else None
    historical = read_historical(base, cfg, kind, cuts)
    control = read_dataset(resolve(base, cfg["control"]), kind, cuts)
    treatment = read_dataset(resolve(base, cfg["treatment"]), kind, cuts)
    try:
        model = make_model(kind, historical, int(art["n_c"]), art.get("prior", {}))
        design = TrialDesign(model, elastic_from_json(art["elastic"]), float(art["cutoff"]), float(art["fallback_T"]))
    except KeyError as exc:
        raise ConfigError(f"artifact is missing {exc}")
    o = run_trial(design, control, treatment, sampler=sampler, seed=seed)
    return {
        "endpoint": kind,
        "T": o.T if math.isfinite(o.T) else None,
        "degenerate": o.degenerate,
        "g": o.g,
        "pess": o.pess,
        "n_h": float(model.n_h),
        "probability": o.probability,
        "cutoff": design.cutoff,
        "reject": o.reject,
        "decision": "reject H0: treatment superior" if o.reject else "do not reject H0",
        "posterior": posterior_summary(model, o.g, control, treatment),
        "sampler": sampler if kind == "survival" else "exact",
    }


def _beta(p: BetaParams) -> dict:
    return {"alpha": p.alpha, "beta": p.beta}


def _normal(p: NormalParams) -> dict:
    if p.is_flat:
        return {"mean": None, "variance": None, "flat": True}
    return {"mean": p.mean, "variance": p.variance, "flat": False}


def posterior_summary(model, g: float, control, treatment) -> dict:
    kind = model.kind
    if kind == "binary":
        prior = binary_elastic_prior(model.alpha0, model.beta0, model.historical, g)
        initial = BetaParams(model.alpha0, model.beta0)
        return {
            "control_prior": _beta(prior),
            "control": _beta(binary_posterior(prior, control)),
            "treatment": _beta(binary_posterior(initial, treatment)),
        }
    if kind in ("normal", "map-normal"):
        if g == 0:
            prior = FLAT
        elif kind == "map-normal":
            prior = NormalParams(model.map.predictive.mean, model.map.predictive.variance / g)
        else:
            prior = normal_elastic_prior(model.historical, g)
        return {
            "control_prior": _normal(prior),
            "control": _normal(normal_posterior(prior, control)),
            "treatment": _normal(normal_posterior(FLAT, treatment)),
        }
    prior = survival_elastic_prior(model.kappa, model.upsilon, model.stats, g)
    sc, st = survival_sufficient_stats(control), survival_sufficient_stats(treatment)
    return {
        "control_prior": {"shape": list(prior.shape), "rate": list(prior.rate)},
        "control_data": {"events": list(sc.events), "exposure": list(sc.exposure)},
        "treatment_data": {"events": list(st.events), "exposure": list(st.exposure)},
    }


SIMULATE_KEYS = {"endpoint", "scenarios", "designs", "calibration", "prior", "cuts", "n_sims", "mode",
                 "calibrate_on", "records_csv", "fresh_R", "seed", "threads"}
SCENARIO_KEYS = {"label", "historical", "control", "treatment", "n_h", "n_c", "n_t", "between_sd"}


def _tuplify(v):
    if isinstance(v, dict):
        return {k: _tuplify(x) for k, x in v.items()}
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def parse_scenario(d: dict, kind: str, cuts, i: int) -> Scenario:
    check_keys(d, SCENARIO_KEYS, f"scenario {i}", required=("historical", "control", "treatment", "n_h", "n_c", "n_t"))
    try:
        h, c, t = (_tuplify(d[k]) for k in ("historical", "control", "treatment"))
        if kind == "survival":
            h, c, t = (np.asarray(x, dtype=float) for x in (h, c, t))
        return Scenario(
            kind, h, c, t, _tuplify(d["n_h"]), d["n_c"], d["n_t"], label=str(d.get("label", i + 1)),
            cuts=cuts, between_sd=float(d.get("between_sd", 0.1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario {i}: {exc}")


def cmd_simulate(cfg: dict, base: Path, seed: int, threads: int):
    check_keys(cfg, SIMULATE_KEYS, "config", required=("endpoint", "scenarios"))
    kind = endpoint_of(cfg)
    cuts = parse_cuts(cfg) if kind == "survival" else None
    if not isinstance(cfg["scenarios"], list):
        raise ConfigError("scenarios must be a list")
    scenarios = [parse_scenario(d, kind, cuts, i) for i, d in enumerate(cfg["scenarios"])]
    designs = cfg.get("designs", ["logistic"])
    if not isinstance(designs, list) or any(d not in ("none", "logistic", "step") for d in designs):
        raise ConfigError("designs must be a list drawn from 'none', 'logistic', 'step'")
    n_sims = _int(cfg.get("n_sims", 1000), "n_sims", 100)
    mode = cfg.get("mode", "reference")
    if mode not in ("reference", "fresh"):
        raise ConfigError("mode must be 'reference' or 'fresh'")
    records_path = cfg.get("records_csv")
    if records_path is not None and mode != "reference":
        raise ConfigError("records_csv needs mode 'reference'")
    fresh_R = _int(cfg.get("fresh_R", 1000), "fresh_R", 100)
    options = prior_options(cfg.get("prior"))
    out = {"endpoint": kind, "n_sims": n_sims, "mode": mode, "seed": seed, "designs": {}, "rows": []}
    if not scenarios:
        return out, [], []
    spec = calibration_spec(cfg.get("calibration"), seed)
    ref = cfg.get("calibrate_on", 0)
    if isinstance(ref, bool) or not isinstance(ref, int) or not 0 <= ref < len(scenarios):
        raise ConfigError("calibrate_on must index a scenario")
    records: List[list] = []
    for name in designs:
        recipe, res = calibrate_design(scenarios[ref], spec, name, options, threads)
        out["designs"][name] = {"cutoff": recipe.cutoff, "q0": recipe.q0, "q1": recipe.q1}
        for s in scenarios:
            rep = operating_characteristics(recipe, s, n_sims, seed, mode, threads, fresh_R, keep_records=records_path is not None)
            out["rows"].append({
                "scenario": s.label,
                "design": name,
                "rejection_pct": 100 * rep.rejection_rate,
                "mc_se_pct": 100 * rep.mc_standard_error,
                "mean_pess": rep.mean_pess,
            })
            if records_path is not None:
                r = rep.metadata["records"]
                for i in range(n_sims):
                    records.append([name, s.label, i, r["T"][i], r["g"][i], r["probability"][i], int(r["reject"][i])])
    return out, records, [records_path] if records_path else []


def format_table(rows: List[dict]) -> str:
    head = f"{'scenario':<10} {'design':<9} {'reject %':>9} {'MC SE':>7} {'PESS':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['scenario']:<10} {r['design']:<9} {r['rejection_pct']:>9.1f} {r['mc_se_pct']:>7.2f} {r['mean_pess']:>8.1f}"
        )
    return "\n".join(lines) + "\n"


def write_records(path: Path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design", "scenario", "replicate", "T", "g", "probability", "reject"])
        for d, s, i, T, g, p, rej in records:
            w.writerow([d, s, i, _fmt_float(float(T)) if math.isfinite(T) else "inf", _fmt_float(float(g)), _fmt_float(float(p)), rej])


# -- entry point --------------------------------------------------------------


def _env_int(name: str) -> Optional[int]:
    v = os.environ.get(name)
    if v is None or v == "":
        return None
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{name} must be an integer")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastic-prior", description="Elastic-prior borrowing of historical controls.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("calibrate", "calibrate an elastic function and cutoff on historical data"),
        ("analyze", "analyse one trial with a calibrated design"),
        ("simulate", "operating characteristics over a scenario list"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides ELASTIC_PRIOR_SEED and config)")
        s.add_argument("--threads", type=int, default=None, help="worker threads (overrides ELASTIC_PRIOR_THREADS)")
        s.add_argument("--out", default=None, help="output JSON path (default stdout)")
    return p


def _fail(code: int, kind: str, msg: str) -> int:
    sys.stderr.write(dumps({"error": kind, "message": msg, "exit_code": code}))
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        base = Path(args.config).resolve().parent
        seed = args.seed if args.seed is not None else _env_int("ELASTIC_PRIOR_SEED")
        if seed is None:
            seed = cfg.get("seed", 0)
        _int(seed, "seed", 0)
        threads = args.threads if args.threads is not None else _env_int("ELASTIC_PRIOR_THREADS")
        if threads is None:
            threads = cfg.get("threads", 1)
        _int(threads, "threads", 1)
        if args.command == "simulate":
            out, records, rec_paths = cmd_simulate(cfg, base, seed, threads)
            sys.stdout.write(format_table(out["rows"]))
            if rec_paths:
                write_records(resolve(base, rec_paths[0]), records)
        elif args.command == "calibrate":
            out = cmd_calibrate(cfg, base, seed, threads)
        else:
            out = cmd_analyze(cfg, base, seed, threads)
        text = dumps(out)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        elif args.command != "simulate":
            sys.stdout.write(text)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except CalibrationInfeasible as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
