"""Matérn covariance, Karhunen-Loève basis and lognormal field sampling.

The d-dimensional basis is the tensor product of 1D Nyström eigenpairs of
the per-direction Matérn factor kernel, so the covariance is
``prod_i C_1d(|x_i - y_i|)``. For ``nu = 1/2`` this is exactly the
exponential kernel in the l1 distance.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import gamma as gamma_fn, kve

__all__ = [
    "MaternParams",
    "FIELD_PRESETS",
    "matern_cov",
    "Eigen1D",
    "solve_1d_eigenproblem",
    "KLBasis",
    "build_kl_basis",
    "FieldSample",
    "evaluate_field",
    "save_basis",
    "load_basis",
]


@dataclass(frozen=True)
class MaternParams:
    corr_len: float
    variance: float = 1.0
    smoothness: float = 0.5
    p_norm: int = 1

    def __post_init__(self):
        for name in ("corr_len", "variance", "smoothness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


FIELD_PRESETS = {
    "F1": MaternParams(1.0, 1.0, 2.5),
    "F2": MaternParams(0.3, 1.0, 1.0),
    "F3": MaternParams(0.075, 1.0, 0.5),
}


def matern_cov(r, params: MaternParams):
    """Matérn covariance as a function of distance ``r`` (scalar or array)."""
    scalar = np.ndim(r) == 0
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    nu, lam, s2 = params.smoothness, params.corr_len, params.variance
    x = np.sqrt(2.0 * nu) * r / lam
    if nu == 0.5:
        c = np.exp(-x)
    elif nu == 1.5:
        c = (1.0 + x) * np.exp(-x)
    elif nu == 2.5:
        c = (1.0 + x + x * x / 3.0) * np.exp(-x)
    else:
        c = np.ones_like(x)
        pos = x > 0
        xp = x[pos]
        # x^nu K_nu(x) with the exponential scaled out to avoid overflow
        c[pos] = 2.0 ** (1.0 - nu) / gamma_fn(nu) * xp**nu * kve(nu, xp) * np.exp(-xp)
    c = s2 * c
    return float(c[0]) if scalar else c


@dataclass(frozen=True)
class Eigen1D:
    """Descending 1D eigenpairs; ``tables[r]`` holds ``f_r`` at ``nodes``."""

    values: np.ndarray
    tables: np.ndarray
    nodes: np.ndarray


def solve_1d_eigenproblem(params: MaternParams, n_quad: int = 512) -> Eigen1D:
    """Nyström discretisation on ``n_quad`` midpoint nodes of [0, 1].

    Eigenvectors are scaled to unit discrete L2 norm (``mean(f**2) == 1``)
    with the first non-negligible entry positive.
    """
    if n_quad < 2:
        raise ValueError("n_quad must be at least 2")
    nodes = (np.arange(n_quad) + 0.5) / n_quad
    A = matern_cov(np.abs(nodes[:, None] - nodes[None, :]), params) / n_quad
    try:
        vals, vecs = scipy.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed for n_quad={n_quad}: {exc}") from exc
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T * np.sqrt(n_quad)
    for v in vecs:
        nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
        if nz.size and v[nz[0]] < 0:
            v *= -1.0
    return Eigen1D(vals, vecs, nodes)


@dataclass(eq=False)
class KLBasis:
    """Truncated tensor-product KL expansion with zero mean.

    ``factors[r, i]`` is the 1D eigen-index used in direction ``i`` by
    term ``r``; all directions share ``eig1d``.
    """

    params: MaternParams
    d: int
    values: np.ndarray
    factors: np.ndarray
    eig1d: Eigen1D
    rel_tol: float
    mean: float = 0.0
    _interp: dict = field(default_factory=dict, repr=False)

    @property
    def s(self) -> int:
        return int(self.values.size)

    @property
    def n_quad(self) -> int:
        return int(self.eig1d.nodes.size)

    def modes_at(self, x: np.ndarray) -> np.ndarray:
        """Used 1D eigenfunctions interpolated to ``x``; shape (n_modes, len(x))."""
        n_modes = int(self.factors.max()) + 1
        nodes = self.eig1d.nodes
        tab = self.eig1d.tables[:n_modes]
        # piecewise-linear, extended linearly past the outermost nodes
        j = np.clip(np.searchsorted(nodes, x) - 1, 0, nodes.size - 2)
        t = (x - nodes[j]) / (nodes[j + 1] - nodes[j])
        return tab[:, j] * (1.0 - t) + tab[:, j + 1] * t

    def modes_on_cells(self, m: int) -> np.ndarray:
        E = self._interp.get(m)
        if E is None:
            E = self.modes_at((np.arange(m) + 0.5) / m)
            E.setflags(write=False)
            self._interp[m] = E
        return E


def build_kl_basis(params: MaternParams, d: int, n_quad: int = 512, rel_tol: float = 1e-3,
                   eig1d: Eigen1D | None = None) -> KLBasis:
    """Tensor-product KL basis truncated at the first term with ``theta_s/theta_1 <= rel_tol``."""
    if d not in (1, 2, 3):
        raise ValueError(f"d must be 1, 2 or 3, got {d}")
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    if eig1d is None:
        # per-direction variance sigma^(2/d) so the product kernel has variance sigma^2
        factor = MaternParams(params.corr_len, params.variance ** (1.0 / d), params.smoothness, params.p_norm)
        eig1d = solve_1d_eigenproblem(factor, n_quad)
    lam = eig1d.values
    n1 = lam.size

    def prod(idx):
        return float(np.prod(lam[list(idx)]))

    start = (0,) * d
    theta1 = prod(start)
    heap = [(-theta1, start)]
    seen = {start}
    values, factors = [], []
    while heap:
        neg, idx = heapq.heappop(heap)
        values.append(-neg)
        factors.append(idx)
        if -neg <= rel_tol * theta1:
            break
        for i in range(d):
            if idx[i] + 1 < n1:
                nxt = idx[:i] + (idx[i] + 1,) + idx[i + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (-prod(nxt), nxt))
    return KLBasis(params, d, np.array(values), np.array(factors, dtype=np.int64).reshape(-1, d),
                   eig1d, rel_tol)


@dataclass(frozen=True)
class FieldSample:
    """Permeability ``k`` at cell centres, array shaped like the grid."""

    cells: tuple
    k: np.ndarray


def log_field(basis: KLBasis, xi: np.ndarray, cells: Sequence[int]) -> np.ndarray:
    """Gaussian field ``Z`` at the cell centres of a grid with ``cells`` per direction."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or xi.size < basis.s:
        raise ValueError(f"need at least {basis.s} normal coordinates, got {xi.size}")
    if len(cells) != basis.d:
        raise ValueError(f"grid dimension {len(cells)} does not match basis dimension {basis.d}")
    coef = np.sqrt(basis.values) * xi[: basis.s]
    n_modes = int(basis.factors.max()) + 1
    C = np.zeros((n_modes,) * basis.d)
    np.add.at(C, tuple(basis.factors.T), coef)
    Z = C
    # contract one direction at a time: (a, b, c) -> (b, c, x) -> (c, x, y) -> (x, y, z)
    for m in cells:
        Z = np.tensordot(Z, basis.modes_on_cells(int(m)), axes=([0], [0]))
    return basis.mean + Z


def evaluate_field(basis: KLBasis, xi: np.ndarray, cells) -> FieldSample:
    """Lognormal ``k = exp(Z)`` on the cell centres; ``cells`` may be a ``Grid``."""
    cells = tuple(int(m) for m in getattr(cells, "cells", cells))
    return FieldSample(cells, np.exp(log_field(basis, xi, cells)))


_CACHE_VERSION = 1


def save_basis(basis: KLBasis, path) -> None:
    p = basis.params
    np.savez(path, version=_CACHE_VERSION,
             params=np.array([p.corr_len, p.variance, p.smoothness, p.p_norm], dtype=float),
             d=basis.d, rel_tol=basis.rel_tol, values=basis.values, factors=basis.factors,
             eig_values=basis.eig1d.values, eig_tables=basis.eig1d.tables, nodes=basis.eig1d.nodes)


def load_basis(path) -> KLBasis:
    with np.load(path) as f:
        if int(f["version"]) != _CACHE_VERSION:
            raise ValueError(f"unsupported basis cache version {int(f['version'])}")
        lam, s2, nu, pn = f["params"]
        params = MaternParams(float(lam), float(s2), float(nu), int(pn))
        eig = Eigen1D(f["eig_values"], f["eig_tables"], f["nodes"])
        return KLBasis(params, int(f["d"]), f["values"], f["factors"], eig, float(f["rel_tol"]))
