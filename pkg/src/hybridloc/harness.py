"""Monte Carlo campaigns: generate, solve, certify, aggregate, export.

Trial ``m`` (1-based) draws all its randomness from
``trial_seed(base_seed, m)``, a 64-bit integer produced by numpy's
``SeedSequence([base_seed, m])``. Trials are therefore independent of each
other and of execution order, and the campaign result depends only on the
configuration.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy

from .certify import certify
from .cost import CoincidentPointsError, WeightMode
from .gen import GenConfig, GenerationError, calibrate_comm_radius, make_instance
from .solver import Init, SolverConfig, refine_nonconvex, solve_convex

log = logging.getLogger(__name__)

ALL_METRICS = ("E1", "E2", "angles", "loc_error", "ml_gap")
# stability is tracked on one per-trial scalar per metric
TRACKED = {"E1": "E1", "E2": "E2", "angles": "angle_mean", "loc_error": "loc_error",
           "ml_gap": "ml_gap"}
TRIAL_COLUMNS = ("trial", "seed", "ok", "attempts", "iterations", "converged", "pg_residual",
                 "objective", "mean_d", "E1", "E2", "E1_per_measurement",
                 "E2_per_measurement", "angle_mean", "angle_frac_below_4",
                 "loc_error", "loc_error_max", "ml_gap", "error")

FAIL_FRACTION = 0.10


class CampaignAborted(RuntimeError):
    def __init__(self, message, summary=None):
        super().__init__(message)
        self.summary = summary


@dataclass(frozen=True)
class McConfig:
    gen: GenConfig = GenConfig()
    solver: SolverConfig = SolverConfig()
    mode: WeightMode = WeightMode.UNIT
    min_trials: int = 50
    max_trials: int = 1000
    window: int = 20
    rel_tol: float = 1e-3
    abs_floor: float = 1e-9
    metrics: tuple = ALL_METRICS
    base_seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.min_trials < 1 or self.min_trials > self.max_trials:
            raise ValueError("need 1 <= min_trials <= max_trials")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        unknown = set(self.metrics) - set(ALL_METRICS)
        if unknown:
            raise ValueError(f"unknown metrics: {sorted(unknown)}")
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", WeightMode(self.mode))
        object.__setattr__(self, "metrics", tuple(self.metrics))

    def replace(self, **changes) -> "McConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return config_to_dict(self)


def config_to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (WeightMode, Init)):
            return v.value
        if isinstance(v, tuple):
            return list(v)
        return v
    return conv(cfg)


def mc_config_from_dict(doc: dict) -> McConfig:
    doc = dict(doc)
    gen = GenConfig(**doc.pop("gen", {}))
    solver = SolverConfig(**doc.pop("solver", {}))
    if "metrics" in doc:
        doc["metrics"] = tuple(doc["metrics"])
    return McConfig(gen=gen, solver=solver, **doc)


def trial_seed(base_seed: int, trial: int) -> int:
    words = np.random.SeedSequence([int(base_seed), int(trial)]).generate_state(2, np.uint32)
    return int(words[0]) << 32 | int(words[1])


@dataclass
class TrialRecord:
    trial: int
    seed: int
    ok: bool
    attempts: int = 0
    iterations: int = 0
    converged: bool = False
    pg_residual: float = np.nan
    objective: float = np.nan
    metrics: dict = field(default_factory=dict)
    angles: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    error: str = ""

    def row(self) -> dict:
        out = {"trial": self.trial, "seed": self.seed, "ok": int(self.ok),
               "attempts": self.attempts, "iterations": self.iterations,
               "converged": int(self.converged), "pg_residual": self.pg_residual,
               "objective": self.objective, "error": self.error}
        for col in TRIAL_COLUMNS:
            if col not in out:
                out[col] = self.metrics.get(col, np.nan)
        return out


def run_trial(cfg: McConfig, trial: int, comm_radius: float) -> TrialRecord:
    seed = trial_seed(cfg.base_seed, trial)
    rng = np.random.default_rng(seed)
    rec = TrialRecord(trial=trial, seed=seed, ok=False)
    try:
        inst, truth, rec.attempts = make_instance(cfg.gen.replace(seed=seed), rng,
                                                  comm_radius=comm_radius)
    except GenerationError as exc:
        rec.error = f"generation: {exc}"
        return rec
    sol = solve_convex(inst, cfg.solver, cfg.mode)
    rec.iterations, rec.converged = sol.iterations, sol.converged
    rec.pg_residual, rec.objective = sol.pg_residual, sol.objective
    if not sol.converged:
        rec.error = "solver did not converge"
        return rec
    try:
        rep = certify(sol, inst, truth)
    except CoincidentPointsError as exc:
        rec.error = f"certify: {exc}"
        return rec
    angles = rep.angles
    m = {
        "mean_d": float(np.concatenate([inst.d, inst.r]).mean()),
        "E1": rep.E1, "E2": rep.E2,
        "E1_per_measurement": rep.E1_per_measurement,
        "E2_per_measurement": rep.E2_per_measurement,
        "angle_mean": float(angles.mean()) if angles.size else np.nan,
        "angle_frac_below_4": float(np.mean(angles < 4.0)) if angles.size else np.nan,
        "loc_error": rep.loc_error, "loc_error_max": rep.loc_error_max,
    }
    if "ml_gap" in cfg.metrics:
        ref = refine_nonconvex(truth.array, inst, cfg.mode)
        m["ml_gap"] = float(np.linalg.norm(sol.x - ref.x, axis=1).mean())
    rec.metrics, rec.angles, rec.ok = m, angles, True
    return rec


class StabilityRule:
    """Windowed relative-span test on running averages.

    After each successful trial the running average of every tracked metric
    is updated. Once at least ``min_trials + window`` trials are in, the
    campaign is stable when, for every metric, the running averages of the
    last ``window`` trials span less than ``rel_tol * max(|mean|, abs_floor)``.
    """

    def __init__(self, keys: Sequence[str], min_trials: int, window: int, rel_tol: float,
                 abs_floor: float = 1e-9):
        self.keys = tuple(keys)
        self.min_trials, self.window = min_trials, window
        self.rel_tol, self.abs_floor = rel_tol, abs_floor
        self.count = 0
        self.running = {k: [] for k in self.keys}

    def update(self, values: dict) -> bool:
        self.count += 1
        M = self.count
        for k in self.keys:
            hist = self.running[k]
            prev = hist[-1] if hist else 0.0
            hist.append(prev * (M - 1) / M + values[k] / M)
        return self.stable()

    def spans(self) -> dict:
        out = {}
        for k in self.keys:
            tail = np.asarray(self.running[k][-self.window:])
            out[k] = float((tail.max() - tail.min()) / max(abs(tail.mean()), self.abs_floor))
        return out

    def stable(self) -> bool:
        if self.count < self.min_trials + self.window:
            return False
        return all(s < self.rel_tol for s in self.spans().values())


@dataclass
class McSummary:
    config: McConfig
    comm_radius: float
    records: list
    running: dict
    trials_run: int
    stopped_by: str
    elapsed: float = 0.0

    @property
    def ok_records(self) -> list:
        return [r for r in self.records if r.ok]

    @property
    def failed(self) -> int:
        return sum(not r.ok for r in self.records)

    def values(self, key: str) -> np.ndarray:
        return np.array([r.metrics[key] for r in self.ok_records if key in r.metrics])

    def pooled_angles(self) -> np.ndarray:
        parts = [r.angles for r in self.ok_records]
        return np.concatenate(parts) if parts else np.zeros(0)

    def cdf_tables(self) -> dict:
        tables = {}
        for name in self.config.metrics:
            vals = self.pooled_angles() if name == "angles" else self.values(name)
            if vals.size:
                tables[name] = export_cdf(vals)
        return tables

    def rows(self) -> list:
        return [r.row() for r in self.records]


def _trial_stream(cfg: McConfig, radius: float) -> Iterable[TrialRecord]:
    if cfg.jobs <= 1:
        for m in range(1, cfg.max_trials + 1):
            yield run_trial(cfg, m, radius)
        return
    batch = 4 * cfg.jobs
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        start = 1
        while start <= cfg.max_trials:
            ids = range(start, min(start + batch, cfg.max_trials + 1))
            yield from pool.map(run_trial, [cfg] * len(ids), ids, [radius] * len(ids))
            start += batch


def run_mc(cfg: McConfig, progress=None) -> McSummary:
    """Run trials in index order until the stability rule or ``max_trials`` stops them."""
    t0 = time.perf_counter()
    radius = cfg.gen.comm_radius
    if radius is None:
        radius = calibrate_comm_radius(cfg.gen)
    rule = StabilityRule([TRACKED[k] for k in cfg.metrics], cfg.min_trials, cfg.window,
                         cfg.rel_tol, cfg.abs_floor)
    records = []
    stopped_by = "MaxTrials"
    for rec in _trial_stream(cfg, radius):
        records.append(rec)
        if progress is not None:
            progress(rec)
        if rec.ok and rule.update(rec.metrics):
            stopped_by = "Stability"
            break
    summary = McSummary(cfg, radius, records, rule.running, len(records), stopped_by,
                        time.perf_counter() - t0)
    if summary.failed > FAIL_FRACTION * summary.trials_run:
        raise CampaignAborted(
            f"{summary.failed} of {summary.trials_run} trials failed", summary)
    return summary


def export_cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF as ``(v_(k), k/N)`` pairs over the sorted values."""
    vals = np.sort(np.asarray(values, dtype=float).ravel())
    if vals.size == 0:
        raise ValueError("cannot build a CDF from an empty list")
    n = vals.size
    return [(float(v), (k + 1) / n) for k, v in enumerate(vals)]


# --- results directory --------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def environment() -> dict:
    return {"python": sys.version.split()[0], "numpy": np.__version__,
            "scipy": scipy.__version__, "platform": platform.platform()}


def write_results(summary: McSummary, outdir) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = summary.config
    campaign = {
        "config": cfg.to_dict(),
        "comm_radius": summary.comm_radius,
        "comm_radius_calibrated": cfg.gen.comm_radius is None,
        "stopping_rule": {"kind": "windowed-relative-span", "window": cfg.window,
                          "rel_tol": cfg.rel_tol, "abs_floor": cfg.abs_floor,
                          "min_trials": cfg.min_trials, "max_trials": cfg.max_trials},
        "stopped_by": summary.stopped_by,
        "trials_run": summary.trials_run,
        "failed": summary.failed,
        "seeds": [r.seed for r in summary.records],
        "elapsed_s": summary.elapsed,
        "environment": environment(),
    }
    (out / "campaign.json").write_text(json.dumps(campaign, indent=1))
    with open(out / "trials.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_COLUMNS)
        for row in summary.rows():
            writer.writerow([_fmt(row[c]) for c in TRIAL_COLUMNS])
    for name, table in summary.cdf_tables().items():
        with open(out / f"cdf_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("value", "cdf"))
            for v, c in table:
                writer.writerow((_fmt(v), _fmt(c)))
    return out


@dataclass
class LoadedResults:
    campaign: dict
    rows: list
    cdfs: dict


def _num(text: str):
    if text == "":
        return np.nan
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def load_results(outdir) -> LoadedResults:
    out = Path(outdir)
    if not (out / "campaign.json").is_file() or not (out / "trials.csv").is_file():
        raise FileNotFoundError(f"{out}: not a results directory (campaign.json/trials.csv)")
    campaign = json.loads((out / "campaign.json").read_text())
    with open(out / "trials.csv", newline="") as fh:
        rows = [{k: (v if k == "error" else _num(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
    cdfs = {}
    for path in sorted(out.glob("cdf_*.csv")):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            cdfs[path.stem[4:]] = np.array([[float(a), float(b)] for a, b in reader])
    return LoadedResults(campaign, rows, cdfs)


# --- reporting ------------------------------------------------------------------

def _stats(vals: np.ndarray) -> dict:
    vals = vals[np.isfinite(vals)]
    if not vals.size:
        return {"count": 0}
    return {"count": int(vals.size), "min": float(vals.min()), "median": float(np.median(vals)),
            "mean": float(vals.mean()), "max": float(vals.max())}


def summarize(results) -> dict:
    """Report document from an :class:`McSummary` or loaded results directory."""
    if isinstance(results, McSummary):
        results = LoadedResults(
            {"config": results.config.to_dict(), "trials_run": results.trials_run,
             "stopped_by": results.stopped_by, "comm_radius": results.comm_radius,
             "failed": results.failed},
            results.rows(),
            {k: np.array(v) for k, v in results.cdf_tables().items()})
    rows = [r for r in results.rows if r["ok"] == 1]
    col = lambda k: np.array([r[k] for r in rows], dtype=float)  # noqa: E731
    metrics = {k: _stats(col(k)) for k in
               ("E1", "E2", "E1_per_measurement", "E2_per_measurement", "angle_mean",
                "loc_error", "loc_error_max", "ml_gap")}
    report = {
        "trials_run": len(results.rows),
        "trials_ok": len(rows),
        "stopped_by": results.campaign.get("stopped_by"),
        "comm_radius": results.campaign.get("comm_radius"),
        "n": results.campaign["config"]["gen"]["n"],
        "tol_pg": results.campaign["config"]["solver"]["tol_pg"],
        "converged_fraction": float(np.mean(col("converged"))) if rows else 0.0,
        "iterations": _stats(col("iterations")),
        "metrics": metrics,
        "cdf_files": sorted(f"cdf_{k}.csv" for k in results.cdfs),
    }
    if "angles" in results.cdfs and len(results.cdfs["angles"]):
        ang = results.cdfs["angles"][:, 0]
        report["angles"] = {"count": int(ang.size),
                            "frac_below_4deg": float(np.mean(ang < 4.0)),
                            "frac_below_10deg": float(np.mean(ang < 10.0))}
    e1, gap = col("E1"), col("ml_gap")
    ok = np.isfinite(e1) & np.isfinite(gap)
    if ok.sum() >= 3:
        report["corr_E1_ml_gap"] = float(np.corrcoef(e1[ok], gap[ok])[0, 1])
    if rows:
        e2, md = col("E2"), col("mean_d")
        report["E2_tight_fraction"] = float(np.mean(
            (e2 <= ACCEPTANCE["E2_abs"]) & (e2 <= 10 * report["tol_pg"] * md)))
        report["loc_error_fraction_le_0.12"] = float(np.mean(col("loc_error") <= 0.12))
    return report


# Thresholds of the desk-scale reproduction, keyed by criterion.
ACCEPTANCE = {
    "E2_abs": 1e-9, "E2_fraction": 0.99,
    "E1_max": 0.12, "E1_median": 0.06,
    "angle_frac4": 0.75, "angle_frac10": 0.95,
    "loc_max": 0.12, "loc_fraction": 0.95, "loc_median": 0.05,
    "E1_max_large": 0.05,
    "corr": 0.8,
    "min_trials_small": 100, "min_trials_large": 50,
}


def check_report(report: dict, baseline: Optional[dict] = None) -> list[tuple[str, bool, str]]:
    """Apply the acceptance thresholds that fit this campaign's size."""
    A = ACCEPTANCE
    m = report["metrics"]
    out = []
    large = report["n"] >= 100
    need = A["min_trials_large"] if large else A["min_trials_small"]
    out.append(("trial count", report["trials_ok"] >= need,
                f"{report['trials_ok']} ok trials (need >= {need})"))
    frac = report.get("E2_tight_fraction", 0.0)
    out.append(("tightness E2", frac >= A["E2_fraction"],
                f"{frac:.3f} of trials with E2 <= {A['E2_abs']:g} and <= 10*tol_pg*mean(d)"))
    if large:
        e1max = m["E1"].get("max", np.inf)
        out.append(("E1 large network", e1max <= A["E1_max_large"],
                    f"max E1 {e1max:.4g} m (<= {A['E1_max_large']})"))
        if baseline is not None:
            ours, ref = m["E1"].get("mean", np.inf), baseline["metrics"]["E1"].get("mean", 0)
            out.append(("E1 vs small network", ours <= ref,
                        f"mean E1 {ours:.4g} vs baseline {ref:.4g}"))
        return out
    out.append(("p1 residual E1",
                m["E1"].get("max", np.inf) <= A["E1_max"]
                and m["E1"].get("median", np.inf) <= A["E1_median"],
                f"max {m['E1'].get('max', np.nan):.4g}, median {m['E1'].get('median', np.nan):.4g}"))
    ang = report.get("angles", {})
    out.append(("suboptimality angles",
                ang.get("frac_below_4deg", 0) >= A["angle_frac4"]
                and ang.get("frac_below_10deg", 0) >= A["angle_frac10"],
                f"{ang.get('frac_below_4deg', np.nan):.3f} below 4 deg, "
                f"{ang.get('frac_below_10deg', np.nan):.3f} below 10 deg"))
    lf = report.get("loc_error_fraction_le_0.12", 0.0)
    med = m["loc_error"].get("median", np.inf)
    out.append(("localization error", lf >= A["loc_fraction"] and med <= A["loc_median"],
                f"{lf:.3f} of trials <= {A['loc_max']} m, median {med:.4g} m"))
    if "corr_E1_ml_gap" in report:
        c = report["corr_E1_ml_gap"]
        out.append(("E1 / ml_gap correlation", c >= A["corr"], f"pearson {c:.3f}"))
    return out


def format_report(report: dict) -> str:
    lines = [f"trials: {report['trials_run']} run, {report['trials_ok']} ok, "
             f"stopped by {report['stopped_by']}; n={report['n']}, "
             f"comm_radius={report['comm_radius']}"]
    for name, st in report["metrics"].items():
        if st.get("count"):
            lines.append(f"{name:>20s}: min {st['min']:.4g}  median {st['median']:.4g}  "
                         f"mean {st['mean']:.4g}  max {st['max']:.4g}")
    if "angles" in report:
        a = report["angles"]
        lines.append(f"{'angles':>20s}: {a['count']} pooled, {a['frac_below_4deg']:.3f} below 4 deg, "
                     f"{a['frac_below_10deg']:.3f} below 10 deg")
    if "corr_E1_ml_gap" in report:
        lines.append(f"{'corr(E1, ml_gap)':>20s}: {report['corr_E1_ml_gap']:.3f}")
    lines.append(f"{'converged':>20s}: {report['converged_fraction']:.3f}")
    return os.linesep.join(lines)
