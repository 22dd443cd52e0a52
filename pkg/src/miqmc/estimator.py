"""Adaptive multi-index (quasi-)Monte Carlo estimators.

``run_mimc`` balances Monte Carlo samples across the index set with the
Lagrange-multiplier allocation and doubles at the index with the largest
variance-to-cost ratio; ``run_miqmc`` does the same with K randomly shifted
rank-1 lattice rules per index, where only doubling is available. Multilevel
variants are the diagonal (``ML``) index set; plain MC/QMC sample a single
grid chosen by a coupled bias check.

Every random quantity is drawn from a stream keyed by
``(seed, purpose, role, index, shift, sample)``, so results do not depend
on evaluation order or on the number of workers.
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import qmc
from .field import FIELD_PRESETS, KLBasis, MaternParams, build_kl_basis
from .mindex import IndexSetSpec, Problem, boundary, generate_index_set

__all__ = [
    "ESTIMATORS",
    "RunConfig",
    "IndexStats",
    "EstimatorReport",
    "mc_mean",
    "mc_sample_variance",
    "qmc_shift_variance",
    "optimal_samples",
    "bias_estimate",
    "choose_eta",
    "fit_work_model",
    "make_problem",
    "run",
    "run_mimc",
    "run_miqmc",
    "run_single_level",
    "NotEnoughSamples",
]

# estimator name -> (sampling, index set kind or None for single level)
ESTIMATORS = {
    "MC": ("MC", None),
    "QMC": ("QMC", None),
    "MLMC": ("MC", "ML"),
    "MLQMC": ("QMC", "ML"),
    "MIMC-FT": ("MC", "FT"),
    "MIMC-TD": ("MC", "TD"),
    "MIMC-WTD": ("MC", "WTD"),
    "MIQMC-FT": ("QMC", "FT"),
    "MIQMC-TD": ("QMC", "TD"),
    "MIQMC-WTD": ("QMC", "WTD"),
}

MAIN, BIAS = 0, 1


class NotEnoughSamples(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    eps: float
    kind: str = "MIQMC-TD"
    seed: int = 0
    warmup: int = 32
    qmc_warmup: int = 4
    shifts: int = 16
    L_max: int = 8
    eta_max: float = 0.9
    work: str = "model"
    point_source: str = "lattice"
    workers: int = 1
    max_samples: int = 2**22
    # problem description
    field: str | MaternParams = "F1"
    d: int = 2
    qoi: str = "G1"
    m0: int | tuple = 4
    M: int | tuple = 2
    weights: tuple | None = None
    n_quad: int = 512
    kl_tol: float = 1e-3
    solver_tol: float = 1e-10
    preconditioner: str = "mg"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.kind not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.kind!r}; choose from {sorted(ESTIMATORS)}")
        if self.sampling == "QMC" and self.shifts < 2:
            raise ValueError("QMC estimators need at least 2 shifts")
        if self.warmup < 2 or self.qmc_warmup < 1:
            raise ValueError("warm-up sizes too small")
        if self.work not in ("model", "wall"):
            raise ValueError("work must be 'model' or 'wall'")
        if self.point_source not in ("lattice", "uniform"):
            raise ValueError("point_source must be 'lattice' or 'uniform'")
        if not 0.5 <= self.eta_max < 1.0:
            raise ValueError("eta_max must lie in [0.5, 1)")

    @property
    def sampling(self) -> str:
        return ESTIMATORS[self.kind][0]

    @property
    def index_kind(self) -> str | None:
        return ESTIMATORS[self.kind][1]

    def matern(self) -> MaternParams:
        return FIELD_PRESETS[self.field] if isinstance(self.field, str) else self.field


_BASIS_CACHE: dict = {}


def make_problem(config: RunConfig) -> Problem:
    key = (config.matern(), config.d, config.n_quad, config.kl_tol)
    basis = _BASIS_CACHE.get(key)
    if basis is None:
        basis = _BASIS_CACHE[key] = build_kl_basis(config.matern(), config.d, config.n_quad, config.kl_tol)
    d = config.d
    m0 = config.m0 if isinstance(config.m0, tuple) else (config.m0,) * d
    M = config.M if isinstance(config.M, tuple) else (config.M,) * d
    return Problem(basis, config.qoi, m0, M, config.solver_tol, config.preconditioner)


# ------------------------------------------------------------ accumulators

@dataclass
class IndexStats:
    """Sums of ``Delta G_ell`` samples; one accumulator per shift in QMC mode."""

    ell: tuple
    mode: str = "MC"
    cost: float = 1.0
    shifts: int = 1
    role: int = MAIN
    n: int = 0
    sums: np.ndarray = None
    sumsq: np.ndarray = None
    wall: float = 0.0
    diagonal: bool = False
    single: bool = False
    shift_vectors: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode == "MC":
            self.shifts = 1
        if self.sums is None:
            self.sums = np.zeros(self.shifts)
            self.sumsq = np.zeros(self.shifts)

    @classmethod
    def from_samples(cls, ell, values, mode="MC", cost=1.0) -> "IndexStats":
        """``values`` is 1D for MC or shaped (K, N) for QMC."""
        v = np.asarray(values, dtype=float)
        if mode == "MC":
            v = v.reshape(1, -1)
        st = cls(tuple(ell), mode, cost, v.shape[0])
        st.add(v)
        return st

    def add(self, values: np.ndarray, wall: float = 0.0) -> None:
        """Add a (K, n_new) block of samples, the same count for every shift."""
        v = np.asarray(values, dtype=float).reshape(self.shifts, -1)
        for k in range(self.shifts):
            for x in v[k]:
                self.sums[k] += x
                self.sumsq[k] += x * x
        self.n += v.shape[1]
        self.wall += wall

    def merge(self, other: "IndexStats") -> "IndexStats":
        if other.ell != self.ell or other.mode != self.mode or other.shifts != self.shifts:
            raise ValueError("cannot merge statistics of different indices or modes")
        return replace(self, n=self.n + other.n, sums=self.sums + other.sums,
                       sumsq=self.sumsq + other.sumsq, wall=self.wall + other.wall)

    @property
    def mean(self) -> float:
        if self.mode == "MC":
            return mc_mean(self)
        return float(np.mean(self.sums / self.n))

    @property
    def contribution(self) -> float:
        """Variance contribution of this index to the estimator."""
        if self.mode == "MC":
            return mc_sample_variance(self) / self.n
        return qmc_shift_variance(self)

    @property
    def samples(self) -> int:
        return self.n * self.shifts


def mc_mean(stats: IndexStats) -> float:
    if stats.n < 1:
        raise NotEnoughSamples(f"no samples at index {stats.ell}")
    return float(stats.sums.sum() / (stats.n * stats.shifts))


def mc_sample_variance(stats: IndexStats) -> float:
    """Unbiased sample variance ``V_ell`` of the difference."""
    n = stats.n * stats.shifts
    if n < 2:
        raise NotEnoughSamples(f"need two samples for a variance at index {stats.ell}")
    s, q = stats.sums.sum(), stats.sumsq.sum()
    return max(float((q - s * s / n) / (n - 1)), 0.0)


def qmc_shift_variance(stats: IndexStats) -> float:
    """Variance of the shift-averaged rule from the spread of the K shift means."""
    K = stats.shifts
    if K < 2:
        raise NotEnoughSamples("need at least two shifts")
    if stats.n < 1:
        raise NotEnoughSamples(f"no samples at index {stats.ell}")
    means = stats.sums / stats.n
    return float(np.sum((means - means.mean()) ** 2) / (K * (K - 1)))


# -------------------------------------------------------------- allocation

def optimal_samples(indices: Sequence, V: dict, W: dict, eps: float, eta: float) -> dict:
    """Real-valued sample counts minimising work subject to ``sum V/N = eta eps^2``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    for ell in indices:
        if V[ell] < 0 or not W[ell] > 0:
            raise ValueError(f"invalid variance or work at index {ell}")
    total = sum(math.sqrt(V[ell] * W[ell]) for ell in indices)
    return {ell: math.sqrt(V[ell] / W[ell]) * total / (eta * eps**2) for ell in indices}


def bias_estimate(means: dict, spec: IndexSetSpec, L: int) -> float:
    """``|sum of E[Delta G] over the boundary of I(L)|``."""
    try:
        return abs(sum(means[ell] for ell in boundary(spec, L)))
    except KeyError as exc:
        raise RuntimeError(f"no samples at boundary index {exc.args[0]}") from None


def choose_eta(bias: float, eps: float, eta_max: float = 0.9) -> float:
    """Variance share of the MSE budget: 1/2 until the bias fits in the other half."""
    if bias**2 >= eps**2 / 2:
        return 0.5
    return min(max(1.0 - bias**2 / eps**2, 0.5), eta_max)


def fit_work_model(cells: Sequence[float], times: Sequence[float]):
    """Least-squares fit of ``time = c * cells**gamma``; ``None`` if degenerate."""
    x, y = np.log(np.asarray(cells, float)), np.log(np.asarray(times, float))
    if x.size < 2 or np.ptp(x) == 0:
        return None
    gamma, logc = np.polyfit(x, y, 1)
    return float(math.exp(logc)), float(gamma)


# ------------------------------------------------------------------ report

@dataclass
class EstimatorReport:
    kind: str
    eps: float
    estimate: float
    variance: float
    bias: float
    error: float
    L: int
    converged: bool
    eta: float
    indices: list
    model_work: float
    wall_time: float
    total_samples: int
    work_fit: tuple | None = None
    n_random: int = 0

    SCHEMA = "miqmc-report/1"
    WALL_FIELDS = ("wall_time", "work_c", "work_gamma")

    def summary(self) -> dict:
        c, g = self.work_fit if self.work_fit else (float("nan"), float("nan"))
        return {
            "schema": self.SCHEMA, "estimator": self.kind, "eps": self.eps,
            "estimate": self.estimate, "variance": self.variance, "bias": self.bias,
            "error": self.error, "L": self.L, "converged": int(self.converged), "eta": self.eta,
            "model_work": self.model_work, "total_samples": self.total_samples,
            "n_random": self.n_random, "wall_time": self.wall_time, "work_c": c, "work_gamma": g,
        }

    def index_rows(self) -> list:
        rows = []
        for st in self.indices:
            var = mc_sample_variance(st) if st.mode == "MC" and st.n >= 2 else float("nan")
            rows.append({
                "index": "-".join(map(str, st.ell)), "role": "bias" if st.role == BIAS else "main",
                "mode": st.mode, "N": st.n, "shifts": st.shifts, "mean": st.mean,
                "V": var, "contribution": st.contribution, "W": st.cost, "wall": st.wall,
            })
        return rows

    def write(self, prefix) -> None:
        """``<prefix>.csv`` per-index table and ``<prefix>.txt`` key=value summary."""
        with open(f"{prefix}.txt", "w") as fh:
            for k, v in self.summary().items():
                fh.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")
        rows = self.index_rows()
        with open(f"{prefix}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ------------------------------------------------------------------ driver

_WORKER_PROBLEM = None


def _init_worker(problem):
    global _WORKER_PROBLEM
    _WORKER_PROBLEM = problem


def _worker_eval(job):
    ell, xi, diagonal, single = job
    return _WORKER_PROBLEM.sample_delta(ell, xi, diagonal, single)


class _Driver:
    def __init__(self, config: RunConfig, problem=None, rule: qmc.LatticeRule | None = None):
        self.cfg = config
        self.problem = problem if problem is not None else make_problem(config)
        self.s = self.problem.n_random
        if config.sampling == "QMC" and config.point_source == "lattice":
            self.rule = rule or qmc.default_rule()
            if self.rule.s_max < self.s:
                raise ValueError(f"lattice rule has {self.rule.s_max} coordinates, field needs {self.s}")
        self.pool = None
        self.timings: dict = {}
        self.wall0 = time.perf_counter()

    # -- evaluation
    def _evaluate(self, jobs):
        if self.cfg.workers > 1 and len(jobs) > 1:
            if self.pool is None:
                self.pool = ProcessPoolExecutor(self.cfg.workers, initializer=_init_worker,
                                                initargs=(self.problem,))
            chunk = max(1, len(jobs) // (4 * self.cfg.workers))
            out = list(self.pool.map(_worker_eval, jobs, chunksize=chunk))
        else:
            out = [self.problem.sample_delta(*job) for job in jobs]
        for ds in out:
            for tau, t in ds.corner_times.items():
                n = math.prod(self.problem.grid(tau).cells)
                acc = self.timings.setdefault(n, [0.0, 0])
                acc[0] += t
                acc[1] += 1
        return out

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    def _new_stats(self, ell, diagonal, single, role=MAIN):
        mode = self.cfg.sampling
        K = self.cfg.shifts if mode == "QMC" else 1
        cost = float(math.prod(self.problem.grid(ell).cells)) if single else self.problem.cost(ell, diagonal)
        return IndexStats(tuple(ell), mode, cost, K, role, diagonal=diagonal, single=single)

    def work_per_sample(self, st: IndexStats) -> float:
        if self.cfg.work == "wall" and st.n > 0:
            return st.wall / st.samples
        return st.cost

    # -- Monte Carlo
    def _mc_xi(self, st, n):
        return qmc.stream(self.cfg.seed, qmc.MC_SAMPLE, st.role, *st.ell, n).standard_normal(self.s)

    def take_mc(self, st: IndexStats, n_new: int) -> None:
        if n_new <= 0:
            return
        if st.n + n_new > self.cfg.max_samples:
            raise RuntimeError(f"sample cap {self.cfg.max_samples} reached at index {st.ell}")
        jobs = [(st.ell, self._mc_xi(st, n), st.diagonal, st.single) for n in range(st.n, st.n + n_new)]
        t0 = time.perf_counter()
        vals = np.array([ds.value for ds in self._evaluate(jobs)])
        st.add(vals.reshape(1, -1), time.perf_counter() - t0)

    # -- quasi-Monte Carlo
    def _shift(self, st, k):
        return qmc.draw_shift(qmc.stream(self.cfg.seed, qmc.SHIFT, st.role, *st.ell, k), self.s)

    def _qmc_points(self, st, k, N, ids):
        if self.cfg.point_source == "uniform":
            u = np.array([qmc.stream(self.cfg.seed, qmc.UNIFORM_POINT, st.role, *st.ell, k, n).random(self.s)
                          for n in ids]).reshape(len(ids), self.s)
            return qmc.inv_normal_cdf(qmc._to_open_cube(u)).reshape(u.shape)
        if st.shift_vectors is None:
            st.shift_vectors = [self._shift(st, j) for j in range(st.shifts)]
        return qmc.qmc_normal_samples(self.rule, N, ids, st.shift_vectors[k], self.s)

    def grow_qmc(self, st: IndexStats, N: int | None = None) -> None:
        """Warm up to ``N`` points per shift, or double the current size."""
        if st.n == 0:
            N_new, ids = N, list(range(N))
        else:
            N_new = 2 * st.n
            # the 2N-point lattice contains the N-point one at even numbers
            ids = list(range(1, N_new, 2)) if self.cfg.point_source == "lattice" else list(range(st.n, N_new))
        if N_new > self.cfg.max_samples:
            raise RuntimeError(f"sample cap {self.cfg.max_samples} reached at index {st.ell}")
        jobs = []
        for k in range(st.shifts):
            xs = self._qmc_points(st, k, N_new, ids)
            jobs += [(st.ell, x, st.diagonal, st.single) for x in xs]
        t0 = time.perf_counter()
        vals = np.array([ds.value for ds in self._evaluate(jobs)]).reshape(st.shifts, len(ids))
        st.add(vals, time.perf_counter() - t0)

    def warm_up(self, st: IndexStats) -> None:
        if st.mode == "MC":
            self.take_mc(st, self.cfg.warmup)
        else:
            self.grow_qmc(st, self.cfg.qmc_warmup)

    # -- variance control
    def reduce_variance(self, active: list, stats: dict, eta: float) -> float:
        eps = self.cfg.eps
        target = eta * eps**2
        if self.cfg.sampling == "MC":
            while True:
                V = {ell: mc_sample_variance(stats[ell]) for ell in active}
                W = {ell: self.work_per_sample(stats[ell]) for ell in active}
                N = optimal_samples(active, V, W, eps, eta)
                for ell in active:
                    self.take_mc(stats[ell], math.ceil(N[ell]) - stats[ell].n)
                Vhat = sum(stats[ell].contribution for ell in active)
                if Vhat <= target:
                    return Vhat
                tau = max(active, key=lambda ell: stats[ell].contribution / self.work_per_sample(stats[ell]))
                self.take_mc(stats[tau], stats[tau].n)
        Vhat = sum(stats[ell].contribution for ell in active)
        while Vhat > target:
            tau = max(active, key=lambda ell: stats[ell].contribution / self.work_per_sample(stats[ell]))
            self.grow_qmc(stats[tau])
            Vhat = sum(stats[ell].contribution for ell in active)
        return Vhat

    # -- reporting
    def report(self, stats: list, estimate, variance, bias, error, L, converged, eta) -> EstimatorReport:
        work = sum(st.samples * st.cost for st in stats)
        fit = None
        if len(self.timings) >= 2:
            cells = sorted(self.timings)
            fit = fit_work_model(cells, [self.timings[c][0] / self.timings[c][1] for c in cells])
        return EstimatorReport(self.cfg.kind, self.cfg.eps, float(estimate), float(variance), float(bias),
                               float(error), L, converged, eta, stats, float(work),
                               time.perf_counter() - self.wall0, int(sum(st.samples for st in stats)),
                               fit, self.s)


def _run_multi_index(config: RunConfig, problem=None, rule=None) -> EstimatorReport:
    drv = _Driver(config, problem, rule)
    try:
        d = drv.problem.d
        spec = IndexSetSpec(config.index_kind, d, config.weights)
        eps = config.eps
        stats: dict = {}
        L = 0
        eta, bias, error, Vhat = 0.5, float("nan"), float("inf"), float("nan")
        converged = False
        while True:
            for ell in boundary(spec, L):
                stats[ell] = drv._new_stats(ell, spec.diagonal, False)
                drv.warm_up(stats[ell])
            active = generate_index_set(spec, L)
            eta = 0.5
            if L >= 2:
                eta = choose_eta(bias_estimate({e: stats[e].mean for e in active}, spec, L), eps, config.eta_max)
            Vhat = drv.reduce_variance(active, stats, eta)
            if L >= 2:
                bias = bias_estimate({e: stats[e].mean for e in active}, spec, L)
                error = math.sqrt(Vhat + bias**2)
                if error < eps:
                    converged = True
                    break
            if L >= config.L_max:
                break
            L += 1
        active = generate_index_set(spec, L)
        estimate = sum(stats[ell].mean for ell in active)
        return drv.report([stats[ell] for ell in active], estimate, Vhat, bias, error, L, converged, eta)
    finally:
        drv.close()


def run_mimc(config: RunConfig, problem=None) -> EstimatorReport:
    """Adaptive multi-index Monte Carlo; MLMC when the index set is ``ML``."""
    if config.sampling != "MC" or config.index_kind is None:
        raise ValueError(f"{config.kind} is not a multi-index Monte Carlo estimator")
    return _run_multi_index(config, problem)


def run_miqmc(config: RunConfig, problem=None, rule=None) -> EstimatorReport:
    """Adaptive multi-index quasi-Monte Carlo; MLQMC when the index set is ``ML``."""
    if config.sampling != "QMC" or config.index_kind is None:
        raise ValueError(f"{config.kind} is not a multi-index quasi-Monte Carlo estimator")
    return _run_multi_index(config, problem, rule)


def run_single_level(config: RunConfig, problem=None, rule=None) -> EstimatorReport:
    """Plain MC or QMC on the diagonal grid ``(L, ..., L)``.

    ``L`` is the first level whose coupled difference ``G_L - G_(L-1)``,
    estimated from warm-up samples, leaves room for the variance; the cost
    of those bias samples is included in the reported work.
    """
    if config.index_kind is not None:
        raise ValueError(f"{config.kind} is not a single-level estimator")
    drv = _Driver(config, problem, rule)
    try:
        d = drv.problem.d
        eps = config.eps
        aux = []
        L, bias, eta = 1, float("nan"), 0.5
        while True:
            ell = (L,) * d
            st = drv._new_stats(ell, True, False, role=BIAS)
            drv.warm_up(st)
            aux.append(st)
            bias = abs(st.mean)
            if bias**2 < eps**2 / 2 or L >= config.L_max:
                break
            L += 1
        eta = choose_eta(bias, eps, config.eta_max)
        main = drv._new_stats((L,) * d, False, True)
        drv.warm_up(main)
        Vhat = drv.reduce_variance([main.ell], {main.ell: main}, eta)
        error = math.sqrt(Vhat + bias**2)
        return drv.report([main] + aux, main.mean, Vhat, bias, error, L, error < eps, eta)
    finally:
        drv.close()


def run(config: RunConfig, problem=None) -> EstimatorReport:
    if config.index_kind is None:
        return run_single_level(config, problem)
    if config.sampling == "MC":
        return run_mimc(config, problem)
    return run_miqmc(config, problem)
