"""Experiment runner: config parsing, data ingestion, artifact writing."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .distributions import gaussian, gumbel_times_normal, sample, simulation1_density, simulation3_sample
from .kde import check_nu
from .optimizer import AnnealConfig
from .pursuit import PursuitAborted, PursuitConfig, PursuitReport, kl_to_truth, run_pursuit

log = logging.getLogger("ppfactor")

PRESETS = {
    "sim1": {"d": 3, "m": 50},
    "sim2": {"d": 10, "m": 50},
    "sim3": {"d": 20, "m": 100},
    "gumbel_normal": {"d": None, "m": None},
    "gaussian": {"d": None, "m": None},
}
_PURSUIT_KEYS = {f.name for f in fields(PursuitConfig)} - {"method", "alpha", "threshold_mode", "nu", "anneal"}
_ANNEAL_KEYS = {f.name for f in fields(AnnealConfig)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    d: int
    m: int
    density_spec: dict | None = None
    data_path: str | None = None
    method: str = "ours"
    alpha: float = 0.9
    nu: float | None = None
    anneal: AnnealConfig = AnnealConfig()
    seed: int = 0
    output_dir: str = "runs/out"
    threshold_mode: str = "paper"
    pursuit: dict = field(default_factory=dict)

    def pursuit_config(self, method: str) -> PursuitConfig:
        return PursuitConfig(method=method, alpha=self.alpha, threshold_mode=self.threshold_mode, nu=self.nu,
                             anneal=self.anneal, **self.pursuit)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["anneal"] = asdict(self.anneal)
        return out


@dataclass(frozen=True)
class RunArtifacts:
    report_json: Path
    table_csv: Path
    trace_csv: Path
    log: Path


# ---------------------------------------------------------------------------
# Config


def _need(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{name}: {msg}")


def _density_spec(raw) -> dict:
    spec = {"preset": raw} if isinstance(raw, str) else raw
    _need(isinstance(spec, dict) and "preset" in spec, "density_spec", "expected a preset name or {'preset': ...}")
    _need(spec["preset"] in PRESETS, "density_spec.preset", f"unknown preset {spec['preset']!r}")
    extra = set(spec) - {"preset", "loc", "scale", "n_outliers"}
    _need(not extra, "density_spec", f"unknown keys {sorted(extra)}")
    return dict(spec)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping and fill defaults."""
    _need(isinstance(raw, dict), "config", "top level must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    _need(not unknown, unknown[0] if unknown else "", "unknown key")
    has_spec, has_data = raw.get("density_spec") is not None, raw.get("data_path") is not None
    _need(has_spec != has_data, "density_spec/data_path", "exactly one of the two must be set")
    mode = raw.get("mode", "simulate" if has_spec else "ingest")
    _need(mode in ("simulate", "ingest"), "mode", "must be 'simulate' or 'ingest'")
    _need((mode == "simulate") == has_spec, "mode", f"mode {mode!r} does not match the data source")

    spec = _density_spec(raw["density_spec"]) if has_spec else None
    preset = PRESETS[spec["preset"]] if spec else {"d": None, "m": None}
    d = raw.get("d", preset["d"])
    m = raw.get("m", preset["m"])
    _need(isinstance(d, int) and d >= 1, "d", "a positive integer is required")
    if preset["d"] is not None and spec["preset"] != "sim3":
        _need(d == preset["d"], "d", f"preset {spec['preset']} has dimension {preset['d']}")
    if mode == "simulate":
        _need(isinstance(m, int) and m > d, "m", "an integer larger than d is required")

    method = raw.get("method", "ours")
    _need(method in ("ours", "huber", "both"), "method", "must be ours, huber or both")
    alpha = raw.get("alpha", 0.9)
    _need(isinstance(alpha, (int, float)) and 0 < alpha < 1, "alpha", "must satisfy 0 < alpha < 1")
    nu = raw.get("nu")
    if nu is not None:
        try:
            check_nu(float(nu), d)
        except ValueError as exc:
            raise ConfigError(f"nu: {exc}; require 0 < nu < 1/(4+d)") from None
    tmode = raw.get("threshold_mode", "paper")
    _need(tmode in ("paper", "corrected"), "threshold_mode", "must be 'paper' or 'corrected'")

    anneal_raw = raw.get("anneal", {})
    _need(isinstance(anneal_raw, dict), "anneal", "must be an object")
    bad = sorted(set(anneal_raw) - _ANNEAL_KEYS)
    _need(not bad, f"anneal.{bad[0]}" if bad else "anneal", "unknown key")
    try:
        anneal = AnnealConfig(**anneal_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"anneal: {exc}") from None

    pursuit = raw.get("pursuit", {})
    _need(isinstance(pursuit, dict), "pursuit", "must be an object")
    bad = sorted(set(pursuit) - _PURSUIT_KEYS)
    _need(not bad, f"pursuit.{bad[0]}" if bad else "pursuit", "unknown key")
    seed = raw.get("seed", 0)
    _need(isinstance(seed, int) and seed >= 0, "seed", "a non-negative integer is required")

    cfg = ExperimentConfig(mode=mode, d=d, m=m if m is not None else 0, density_spec=spec,
                           data_path=raw.get("data_path"), method=method, alpha=float(alpha),
                           nu=None if nu is None else float(nu), anneal=anneal, seed=seed,
                           output_dir=str(raw.get("output_dir", "runs/out")), threshold_mode=tmode,
                           pursuit=dict(pursuit))
    try:
        cfg.pursuit_config("ours")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pursuit: {exc}") from None
    return cfg


def parse_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def preset_config(preset: str, **overrides) -> ExperimentConfig:
    raw = {"density_spec": preset, "output_dir": f"runs/{preset}", "method": "both"}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Data


@dataclass(frozen=True)
class IngestResult:
    data: np.ndarray
    dropped: int
    header: list | None


def ingest_sample(path, d: int) -> IngestResult:
    """Read a numeric CSV with ``d`` columns; rows holding NaN or inf are dropped and counted."""
    rows, header, dropped = [], None, 0
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != d:
                raise ValueError(f"row {lineno}: expected {d} columns, found {len(rec)}")
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if lineno == 1 and header is None and not rows:
                    header = [c.strip() for c in rec]
                    continue
                raise ValueError(f"row {lineno}: non-numeric value") from None
            if all(math.isfinite(v) for v in vals):
                rows.append(vals)
            else:
                dropped += 1
    if not rows:
        raise ValueError(f"{path}: no finite rows")
    return IngestResult(np.array(rows, dtype=float), dropped, header)


def _simulate(cfg: ExperimentConfig):
    """(sample, truth) for a simulate config; truth is the law the pursuit should recover."""
    spec = cfg.density_spec
    name = spec["preset"]
    if name == "sim1":
        f = simulation1_density()
        return sample(f, cfg.m, cfg.seed), f
    if name == "gaussian":
        f = gaussian(np.zeros(cfg.d), np.eye(cfg.d))
        return sample(f, cfg.m, cfg.seed), f
    f = gumbel_times_normal(cfg.d, spec.get("loc", -5.0), spec.get("scale", 1.0))
    n_out = spec.get("n_outliers", 4 if name == "sim3" else 0)
    if n_out:
        x = simulation3_sample(cfg.seed, cfg.m, n_out, cfg.d)
        if "loc" in spec or "scale" in spec:
            x[: cfg.m - n_out] = sample(f, cfg.m - n_out, cfg.seed)
        return x, f
    return sample(f, cfg.m, cfg.seed), f


# ---------------------------------------------------------------------------
# Serialization


def sig6(x):
    """Round to 6 significant digits; nonfinite values become None."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.6g}")


def _num(x) -> str:
    v = sig6(x)
    return "" if v is None else repr(v)


def _vec(a) -> list:
    return [sig6(v) for v in np.asarray(a, dtype=float).ravel()]


def _test_dict(t) -> dict | None:
    if t is None:
        return None
    return {
        "statistic": sig6(t.statistic), "z": sig6(t.z), "p_value": sig6(t.p_value), "threshold": sig6(t.threshold),
        "in_ellipsoid": bool(t.in_ellipsoid), "decision": t.decision, "mode": t.mode, "n": int(t.n),
        "degenerate": bool(t.degenerate),
    }


def report_dict(rep: PursuitReport, kl_truth=None) -> dict:
    its = []
    for it in rep.iterations:
        its.append({
            "k": it.k,
            "direction": _vec(it.direction),
            "paper_style_direction": _vec(it.paper_style_direction),
            "extremum": sig6(it.criterion.value),
            "variance": sig6(it.criterion.variance_hat),
            "n_used": int(it.criterion.n_used),
            "test": _test_dict(it.test),
            "n_evals": int(it.n_evals),
            "converged": bool(it.converged),
        })
    return {
        "method": rep.method,
        "seed": rep.seed,
        "k": rep.k,
        "stopped": bool(rep.stopped),
        "conclusion": rep.conclusion,
        "initial_test": _test_dict(rep.initial_test),
        "iterations": its,
        "kl_trace": [sig6(v) for v in rep.kl_trace],
        "kl_se": [sig6(v) for v in rep.kl_se],
        "kl_to_truth": None if kl_truth is None else sig6(kl_truth.value),
        "kl_to_truth_se": None if kl_truth is None else sig6(kl_truth.se),
        "n_kept": rep.n_kept,
        "n_dropped": rep.n_dropped,
        "theta": sig6(rep.theta),
        "clamp_count": int(rep.clamp_count),
        "orthogonality": sig6(rep.orthogonality()),
        "sampling": [{k: (sig6(v) if isinstance(v, float) else v) for k, v in s.items()} for s in rep.sampling],
        "config_echo": _echo_json(rep.config_echo),
        "failure": rep.failure,
    }


def _echo_json(obj):
    if isinstance(obj, dict):
        return {k: _echo_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_echo_json(v) for v in obj]
    if isinstance(obj, float):
        return sig6(obj)
    return obj


def table_rows(method: str, rep_d: dict) -> list[list[str]]:
    """One projection row and one test row per iteration, then the KL row.

    ``value`` holds the criterion extremum on projection rows and the
    studentised statistic on test rows.
    """
    rows = []
    if rep_d["initial_test"] is not None:
        t = rep_d["initial_test"]
        rows.append([method, "initial_test", "0", _num(t["statistic"]), "", _num(t["p_value"]), str(t["in_ellipsoid"]), ""])
    for it in rep_d["iterations"]:
        point = " ".join(_num(v) for v in it["direction"])
        t = it["test"]
        rows.append([method, "projection", str(it["k"] - 1), _num(it["extremum"]), point,
                     _num(t["p_value"]), "", ""])
        rows.append([method, "test", str(it["k"]), _num(t["statistic"]), "", "", str(t["in_ellipsoid"]), ""])
    rows.append([method, "kl_to_truth", str(rep_d["k"]), "", "", "", "", _num(rep_d["kl_to_truth"])])
    return rows


TABLE_HEADER = ["method", "row", "iteration", "value", "point", "p_value", "verdict", "kl_to_truth"]
TRACE_HEADER = ["method", "iteration", "step", "temperature", "value"]


# ---------------------------------------------------------------------------
# Runner


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[RunArtifacts, int]:
    """Run the configured experiment and write its artifacts.

    Returns the artifact paths and a status: 0 on success, 3 when a pursuit
    aborted numerically (partial results are still written).
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    arts = RunArtifacts(out / "report.json", out / "table.csv", out / "trace.csv", out / "run.log")
    handler = logging.FileHandler(arts.log, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("ppfactor")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        return arts, _run(cfg, arts)
    finally:
        root.removeHandler(handler)
        handler.close()


def _run(cfg: ExperimentConfig, arts: RunArtifacts) -> int:
    truth = None
    dropped = 0
    if cfg.mode == "simulate":
        x, truth = _simulate(cfg)
    else:
        ing = ingest_sample(cfg.data_path, cfg.d)
        x, dropped = ing.data, ing.dropped
        log.info("ingested %d rows from %s, dropped %d nonfinite", len(x), cfg.data_path, dropped)
    log.info("seed %d, sample %d x %d, method %s", cfg.seed, x.shape[0], x.shape[1], cfg.method)

    methods = ["ours", "huber"] if cfg.method == "both" else [cfg.method]
    runs, failure, status = {}, None, 0
    for method in methods:
        try:
            rep = run_pursuit(x, cfg=cfg.pursuit_config(method), seed=cfg.seed)
        except PursuitAborted as exc:
            rep, failure, status = exc.report, f"{method}: {exc}", 3
            log.error("pursuit aborted (%s)", failure)
        kl = None
        if truth is not None and rep.failure is None:
            try:
                kl = kl_to_truth(rep, truth, rng_seed=cfg.seed)
            except (FloatingPointError, RuntimeError) as exc:
                log.warning("KL to truth unavailable: %s", exc)
        runs[method] = (rep, report_dict(rep, kl))
        log.info("%s: %s after %d iteration(s)", method, rep.conclusion, len(rep.iterations))
        if status:
            break

    doc = {
        "config": _echo_json(cfg.to_dict()),
        "seed": cfg.seed,
        "n_rows": int(x.shape[0]),
        "rows_dropped_nonfinite": dropped,
        "runs": {m: d for m, (_, d) in runs.items()},
        "failure": failure,
    }
    arts.report_json.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    with open(arts.table_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for m, (_, d) in runs.items():
            w.writerows(table_rows(m, d))
    with open(arts.trace_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for m, (rep, _) in runs.items():
            for it in rep.iterations:
                for step, temp, val in it.trace:
                    w.writerow([m, it.k, step, _num(temp), _num(val)])
    return status


# ---------------------------------------------------------------------------
# Entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppfactor", description="Projection pursuit density factorization")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    s = sub.add_parser("simulate", help="run a built-in simulation design")
    s.add_argument("--preset", required=True, choices=["sim1", "sim2", "sim3"])
    s.add_argument("--seed", type=int)
    s.add_argument("--method", choices=["ours", "huber", "both"])
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
        else:
            cfg = preset_config(args.preset, seed=args.seed, method=args.method)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        arts, status = run_experiment(cfg, args.out)
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, RuntimeError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {arts.report_json.parent}")
    if status:
        print("numerical abort; partial results written", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
