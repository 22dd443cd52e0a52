"""Multi-indices, admissible index sets and the mixed difference operator."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import pde
from .field import KLBasis, evaluate_field

__all__ = [
    "IndexSetSpec",
    "generate_index_set",
    "is_admissible",
    "boundary",
    "corner_expansion",
    "DeltaSample",
    "Problem",
    "QOI_POINT",
]

KINDS = ("FT", "TD", "WTD", "ML")


@dataclass(frozen=True)
class IndexSetSpec:
    kind: str
    d: int
    weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown index set kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.kind == "WTD":
            w = self.weights
            if w is None or len(w) != self.d:
                raise ValueError("WTD needs one weight per direction")
            if any(not 0 < x <= 1 for x in w) or not math.isclose(sum(w), 1.0):
                raise ValueError(f"WTD weights must lie in (0, 1] and sum to 1, got {w}")

    @property
    def diagonal(self) -> bool:
        return self.kind == "ML"


def _order(indices) -> list:
    return sorted(indices, key=lambda ell: (sum(ell), ell))


def generate_index_set(spec: IndexSetSpec, L: int) -> list:
    """All indices of ``I(L)``, ordered by total level then lexicographically."""
    if L < 0:
        raise ValueError("L must be >= 0")
    d = spec.d
    if spec.kind == "ML":
        return [(j,) * d for j in range(L + 1)]
    if spec.kind == "FT":
        return _order(itertools.product(range(L + 1), repeat=d))
    if spec.kind == "TD":
        return _order(ell for ell in itertools.product(range(L + 1), repeat=d) if sum(ell) <= L)
    w = spec.weights
    bounds = [range(int(math.floor(L / wi + 1e-9)) + 1) for wi in w]
    return _order(ell for ell in itertools.product(*bounds)
                  if sum(wi * li for wi, li in zip(w, ell)) <= L + 1e-9)


def is_admissible(indices) -> bool:
    """Downward closedness: every componentwise-smaller index is present."""
    s = set(map(tuple, indices))
    for ell in s:
        for i, li in enumerate(ell):
            if li > 0 and ell[:i] + (li - 1,) + ell[i + 1:] not in s:
                return False
    return True


def boundary(spec: IndexSetSpec, L: int) -> list:
    if L == 0:
        return generate_index_set(spec, 0)
    prev = set(generate_index_set(spec, L - 1))
    return [ell for ell in generate_index_set(spec, L) if ell not in prev]


def corner_expansion(ell: Sequence[int], diagonal: bool = False) -> list:
    """Signed grids of the difference at ``ell``.

    With ``diagonal`` the index is a level on the diagonal hierarchy and the
    difference is ``G_ell - G_(ell-1,...,ell-1)``.
    """
    ell = tuple(int(x) for x in ell)
    if diagonal:
        if len(set(ell)) != 1:
            raise ValueError(f"diagonal difference needs a constant index, got {ell}")
        if ell[0] == 0:
            return [(ell, 1)]
        return [(ell, 1), (tuple(x - 1 for x in ell), -1)]
    choices = [[(li, 0)] + ([(li - 1, 1)] if li > 0 else []) for li in ell]
    out = []
    for combo in itertools.product(*choices):
        tau = tuple(c[0] for c in combo)
        out.append((tau, -1 if sum(c[1] for c in combo) % 2 else 1))
    return out


@dataclass
class DeltaSample:
    ell: tuple
    value: float
    corners: dict
    wall_time: float
    model_cost: float
    corner_times: dict = field(default_factory=dict)


QOI_POINT = (0.5, 0.5, 0.5)


@dataclass(eq=False)
class Problem:
    """Random elliptic problem on a grid hierarchy, producing ``DeltaSample``.

    ``qoi`` is ``"G1"`` (centre pressure, zero Dirichlet, unit source),
    ``"G2"`` (outflow through x_1 = 1 in a flow cell) or a callable
    ``qoi(grid, p, k) -> float`` used with ``bc``/``source``.
    """

    basis: KLBasis
    qoi: str | Callable = "G1"
    m0: tuple | None = None
    M: tuple | None = None
    tol: float = 1e-10
    preconditioner: str = "mg"
    bc: pde.BoundarySpec | None = None
    source: float | Callable | None = None

    def __post_init__(self):
        d = self.basis.d
        self.m0 = tuple(self.m0) if self.m0 is not None else (4,) * d
        self.M = tuple(self.M) if self.M is not None else (2,) * d
        if len(self.m0) != d or len(self.M) != d:
            raise ValueError("m0 and M must have one entry per dimension")
        if self.qoi == "G1":
            self.bc = self.bc or pde.dirichlet_all(d, 0.0)
            self.source = 1.0 if self.source is None else self.source
        elif self.qoi == "G2":
            self.bc = self.bc or pde.flow_cell(d)
            self.source = 0.0 if self.source is None else self.source
        elif callable(self.qoi):
            if self.bc is None:
                raise ValueError("a custom QoI needs boundary conditions")
            self.source = 0.0 if self.source is None else self.source
        else:
            raise ValueError(f"unknown QoI {self.qoi!r}")

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def n_random(self) -> int:
        return self.basis.s

    def grid(self, tau) -> pde.Grid:
        return pde.build_grid(self.m0, self.M, tau)

    def evaluate(self, tau, xi) -> float:
        grid = self.grid(tau)
        k = evaluate_field(self.basis, xi, grid.cells).k
        p = pde.solve_diffusion(grid, k, self.bc, self.source, self.tol, self.preconditioner)
        if self.qoi == "G1":
            return pde.qoi_point(p, grid, QOI_POINT[: grid.d] if grid.d <= 3 else (0.5,) * grid.d)
        if self.qoi == "G2":
            return pde.qoi_flux(p, k, grid, self.bc)
        return float(self.qoi(grid, p, k))

    def cost(self, ell, diagonal: bool = False) -> float:
        """Model cost of one difference sample: total cells over all corner grids."""
        return float(sum(math.prod(self.grid(tau).cells) for tau, _ in corner_expansion(ell, diagonal)))

    def sample_delta(self, ell, xi, diagonal: bool = False, single: bool = False) -> DeltaSample:
        """Difference ``Delta G_ell`` for one realisation ``xi`` shared by all corners.

        ``single`` skips the difference and returns ``G_ell`` itself.
        """
        ell = tuple(ell)
        xi = np.asarray(xi, dtype=float)
        if xi.size < self.n_random:
            raise ValueError(f"need {self.n_random} normal coordinates, got {xi.size}")
        corners = [(ell, 1)] if single else corner_expansion(ell, diagonal)
        values, times = {}, {}
        total = 0.0
        cost = 0.0
        t_all = time.perf_counter()
        for tau, sign in corners:
            t0 = time.perf_counter()
            try:
                g = self.evaluate(tau, xi)
            except pde.SolverError as exc:
                raise pde.SolverError(f"index {ell}, corner {tau}: {exc}", exc.residual, exc.iterations) from exc
            times[tau] = time.perf_counter() - t0
            values[tau] = g
            total += sign * g
            cost += math.prod(self.grid(tau).cells)
        return DeltaSample(ell, total, values, time.perf_counter() - t_all, float(cost), times)
