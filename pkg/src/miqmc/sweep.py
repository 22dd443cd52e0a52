"""Tolerance sweeps and cost-versus-accuracy rate fits."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ExperimentPlan
from .estimator import run

__all__ = ["RateFit", "fit_rate", "run_sweep", "read_runs", "rate_table", "RUN_COLUMNS"]

RUN_COLUMNS = ["estimator", "eps", "rep", "seed", "estimate", "error", "variance", "bias",
               "model_work", "wall_time", "L", "total_samples", "converged"]


@dataclass(frozen=True)
class RateFit:
    """``eps ~ c * cost**(-r)``; equivalently ``cost ~ eps**(-q)`` with ``q = 1/r``."""

    r: float
    q: float
    intercept: float
    residual: float
    n_points: int


def fit_rate(points: Sequence[tuple]) -> RateFit:
    """Least squares of ``log eps`` against ``log cost`` over ``(eps, cost)`` pairs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (eps, cost) points")
    if np.any(pts <= 0):
        raise ValueError("eps and cost must be positive")
    x, y = np.log(pts[:, 1]), np.log(pts[:, 0])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("degenerate data: eps or cost is constant")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r = -float(slope)
    return RateFit(r, 1.0 / r if r != 0 else math.inf, float(math.exp(intercept)),
                   float(np.sqrt(np.mean(resid**2))), len(pts))


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _run_entry(args):
    plan, kind, eps, seed = args
    return run(plan.config(kind, eps, seed))


def run_sweep(plan: ExperimentPlan, out: str | None = None, workers: int = 1) -> int:
    """Run every (estimator, eps, repetition) entry and write the result files.

    Writes ``runs.csv``, ``rates.csv``, ``summary.txt`` and per-run reports
    under ``reports/``. Returns 0 when every run converged, 2 otherwise.
    """
    out = out or plan.out
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    entries = list(plan.entries())
    jobs = [(plan, kind, eps, seed) for kind, _, eps, _, seed in entries]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_run_entry, jobs))
    else:
        reports = [_run_entry(j) for j in jobs]

    rows = []
    for (kind, i, eps, rep, seed), rpt in zip(entries, reports):
        rpt.write(os.path.join(out, "reports", f"{kind}_e{i}_r{rep}"))
        rows.append({
            "estimator": kind, "eps": eps, "rep": rep, "seed": seed, "estimate": rpt.estimate,
            "error": rpt.error, "variance": rpt.variance, "bias": rpt.bias,
            "model_work": rpt.model_work, "wall_time": rpt.wall_time, "L": rpt.L,
            "total_samples": rpt.total_samples, "converged": rpt.converged,
        })
    with open(os.path.join(out, "runs.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RUN_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})

    fits = rate_table(rows)
    with open(os.path.join(out, "rates.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "measure", "r", "q", "intercept", "residual", "n_points"])
        for kind, measure, fit in fits:
            w.writerow([kind, measure, repr(fit.r), repr(fit.q), repr(fit.intercept),
                        repr(fit.residual), fit.n_points])

    failed = sum(not r["converged"] for r in rows)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("schema=miqmc-sweep/1\n")
        fh.write(f"problem={plan.problem}\nfield={plan.field}\nd={plan.d}\n")
        fh.write(f"estimators={','.join(plan.estimators)}\n")
        fh.write(f"eps={','.join(repr(e) for e in plan.eps)}\n")
        fh.write(f"repetitions={plan.repetitions}\nseed={plan.seed}\n")
        fh.write(f"runs={len(rows)}\nnot_converged={failed}\n")
    return 0 if failed == 0 else 2


def rate_table(rows) -> list:
    """Fits of eps against mean model work and mean wall time per estimator."""
    out = []
    kinds = list(dict.fromkeys(r["estimator"] for r in rows))
    for kind in kinds:
        sub = [r for r in rows if r["estimator"] == kind]
        for measure in ("model_work", "wall_time"):
            by_eps: dict = {}
            for r in sub:
                by_eps.setdefault(float(r["eps"]), []).append(float(r[measure]))
            if len(by_eps) < 3:
                continue
            pts = [(e, float(np.mean(v))) for e, v in by_eps.items()]
            try:
                out.append((kind, measure, fit_rate(pts)))
            except ValueError:
                continue
    return out


def read_runs(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
