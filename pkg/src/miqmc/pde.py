"""Cell-centred finite volumes for ``-div(k grad p) = f`` on the unit cube.

Face transmissibilities use the harmonic mean of the two adjacent cell
values; Dirichlet faces are eliminated with a half-cell distance and
Neumann faces enter as a prescribed outward flux. The symmetric positive
definite system is solved by conjugate gradients preconditioned with a
geometric multigrid V-cycle (semi-coarsening towards the finest direction,
rediscretised coarse operators, damped Jacobi smoothing).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid",
    "build_grid",
    "BoundarySpec",
    "dirichlet_all",
    "flow_cell",
    "assemble",
    "solve_diffusion",
    "SolverError",
    "qoi_point",
    "qoi_flux",
    "dump_pressure",
    "MAX_CELLS",
]

MAX_CELLS = 2**28

Value = Union[float, Callable[..., np.ndarray]]


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Grid:
    """Tensor grid on [0, 1]^d with ``cells[i]`` uniform cells in direction i."""

    cells: tuple

    @property
    def d(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> tuple:
        return tuple(1.0 / m for m in self.cells)

    @property
    def n(self) -> int:
        return math.prod(self.cells)

    def centers(self, i: int) -> np.ndarray:
        return (np.arange(self.cells[i]) + 0.5) / self.cells[i]


def build_grid(m0: Sequence[int], M: Sequence[int], ell: Sequence[int], max_cells: int = MAX_CELLS) -> Grid:
    if not len(m0) == len(M) == len(ell):
        raise ValueError("m0, M and ell must have the same length")
    for a, b, c in zip(m0, M, ell):
        if a < 1 or b < 2 or c < 0:
            raise ValueError(f"need m0 >= 1, M >= 2, ell >= 0; got {a}, {b}, {c}")
    cells = tuple(int(a) * int(b) ** int(c) for a, b, c in zip(m0, M, ell))
    if math.prod(cells) > max_cells:
        raise MemoryError(f"grid {cells} exceeds the cap of {max_cells} cells")
    return Grid(cells)


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary data per face ``(direction, side)`` with side 0 at x_i=0, 1 at x_i=1.

    Each entry is ``("dirichlet", value)`` or ``("neumann", outward_flux)``.
    Values are constants or callables of the face-centre coordinates (one
    array per direction).
    """

    faces: dict

    def __post_init__(self):
        for key, (kind, _) in self.faces.items():
            if kind not in ("dirichlet", "neumann"):
                raise ValueError(f"face {key}: unknown boundary kind {kind!r}")
        if not any(kind == "dirichlet" for kind, _ in self.faces.values()):
            raise ValueError("at least one Dirichlet face is required")

    def face(self, i: int, side: int):
        try:
            return self.faces[(i, side)]
        except KeyError:
            raise ValueError(f"no boundary condition for face ({i}, {side})") from None

    def homogeneous(self) -> "BoundarySpec":
        return BoundarySpec({k: (kind, 0.0) for k, (kind, _) in self.faces.items()})


def dirichlet_all(d: int, value: Value = 0.0) -> BoundarySpec:
    return BoundarySpec({(i, s): ("dirichlet", value) for i in range(d) for s in (0, 1)})


def flow_cell(d: int, inflow: float = 1.0, outflow: float = 0.0) -> BoundarySpec:
    """Pressure ``inflow`` at x_1=0, ``outflow`` at x_1=1, no flux elsewhere."""
    faces = {(0, 0): ("dirichlet", inflow), (0, 1): ("dirichlet", outflow)}
    for i in range(1, d):
        faces[(i, 0)] = ("neumann", 0.0)
        faces[(i, 1)] = ("neumann", 0.0)
    return BoundarySpec(faces)


def _face_values(value: Value, grid: Grid, i: int, side: int) -> np.ndarray:
    """Boundary data at the face centres of face ``(i, side)``, shaped like the face."""
    shape = grid.cells[:i] + grid.cells[i + 1:]
    if not callable(value):
        return np.full(shape, float(value))
    coords = [grid.centers(j) for j in range(grid.d)]
    coords[i] = np.array([float(side)])
    mesh = np.meshgrid(*coords, indexing="ij")
    return np.broadcast_to(np.asarray(value(*mesh), dtype=float), [len(c) for c in coords]).reshape(shape)


def _slab(d: int, i: int, idx) -> tuple:
    s = [slice(None)] * d
    s[i] = idx
    return tuple(s)


def assemble(grid: Grid, k: np.ndarray, bc: BoundarySpec, f: Value = 0.0):
    """Return ``(A, b)`` of the FV system, equations scaled per unit volume."""
    k = np.asarray(k, dtype=float)
    if k.shape != grid.cells:
        raise ValueError(f"permeability shape {k.shape} does not match grid {grid.cells}")
    if not np.all(k > 0):
        raise ValueError("permeability must be strictly positive")
    d, n = grid.d, grid.n
    index = np.arange(n).reshape(grid.cells)
    diag = np.zeros(grid.cells)
    if callable(f):
        rhs = np.asarray(f(*np.meshgrid(*[grid.centers(i) for i in range(d)], indexing="ij")), dtype=float)
        rhs = np.broadcast_to(rhs, grid.cells).copy()
    else:
        rhs = np.full(grid.cells, float(f))
    rows, cols, vals = [], [], []
    for i in range(d):
        h2 = grid.h[i] ** 2
        if grid.cells[i] > 1:
            lo, hi = _slab(d, i, slice(0, -1)), _slab(d, i, slice(1, None))
            ka, kb = k[lo], k[hi]
            T = 2.0 * ka * kb / (ka + kb) / h2
            diag[lo] += T
            diag[hi] += T
            a, b = index[lo].ravel(), index[hi].ravel()
            t = -T.ravel()
            rows += [a, b]
            cols += [b, a]
            vals += [t, t]
        for side, idx in ((0, 0), (1, -1)):
            kind, value = bc.face(i, side)
            sl = _slab(d, i, idx)
            data = _face_values(value, grid, i, side)
            if kind == "dirichlet":
                T = 2.0 * k[sl] / h2
                diag[sl] += T
                rhs[sl] += T * data
            else:
                # outward flux n.(k grad p) = data over a face of area A, cell volume A*h
                rhs[sl] += data / grid.h[i]
    rows.append(index.ravel())
    cols.append(index.ravel())
    vals.append(diag.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sum_duplicates()
    A.sort_indices()
    return A, rhs.ravel()


# ---------------------------------------------------------------- multigrid

COARSE_CELLS = 128
JACOBI_WEIGHT = 0.8


@dataclass
class _Level:
    A: sp.csr_matrix
    dinv: np.ndarray
    fine_cells: tuple = ()
    coarse_cells: tuple = ()
    axes: tuple = ()  # directions coarsened on the way to the next level


@dataclass
class _Hierarchy:
    levels: list
    coarse: tuple = field(default=None)

    def vcycle(self, r: np.ndarray) -> np.ndarray:
        return self._cycle(0, r)

    def _cycle(self, lvl: int, r: np.ndarray) -> np.ndarray:
        L = self.levels[lvl]
        if lvl == len(self.levels) - 1:
            return scipy.linalg.cho_solve(self.coarse, r)
        w = JACOBI_WEIGHT * L.dinv
        x = w * r
        x += w * (r - L.A @ x)
        res = r - L.A @ x
        rc = _restrict(res, L.fine_cells, L.axes)
        x += _prolong(self._cycle(lvl + 1, rc), L.coarse_cells, L.axes, L.fine_cells)
        x += w * (r - L.A @ x)
        x += w * (r - L.A @ x)
        return x


def _restrict(r: np.ndarray, cells: tuple, axes: tuple) -> np.ndarray:
    """Average over the 2 children in each coarsened direction."""
    shape = []
    for i, m in enumerate(cells):
        shape += [m // 2, 2] if i in axes else [m]
    x = r.reshape(shape)
    pos, red = 0, []
    for i in range(len(cells)):
        if i in axes:
            red.append(pos + 1)
            pos += 2
        else:
            pos += 1
    return x.mean(axis=tuple(red)).ravel()


def _prolong(e: np.ndarray, coarse: tuple, axes: tuple, fine: tuple) -> np.ndarray:
    x = e.reshape(coarse)
    for i in axes:
        x = np.repeat(x, 2, axis=i)
    return x.ravel()


def _coarsen_k(k: np.ndarray, axes: tuple) -> np.ndarray:
    # geometric mean of the children keeps log-permeability smooth
    logk = np.log(k)
    cells = k.shape
    return np.exp(_restrict(logk.ravel(), cells, axes).reshape(
        tuple(m // 2 if i in axes else m for i, m in enumerate(cells))))


def _build_hierarchy(grid: Grid, k: np.ndarray, bc: BoundarySpec, A: sp.csr_matrix) -> _Hierarchy:
    hbc = bc.homogeneous()
    levels = []
    cells, kk = grid.cells, k
    while True:
        lvl = _Level(A, 1.0 / A.diagonal())
        levels.append(lvl)
        if math.prod(cells) <= COARSE_CELLS:
            break
        hmin = min(1.0 / m for m in cells)
        axes = tuple(i for i, m in enumerate(cells)
                     if m % 2 == 0 and m >= 2 and math.isclose(1.0 / m, hmin))
        if not axes:
            break
        coarse = tuple(m // 2 if i in axes else m for i, m in enumerate(cells))
        lvl.fine_cells, lvl.coarse_cells, lvl.axes = cells, coarse, axes
        kk = _coarsen_k(kk, axes)
        cells = coarse
        A, _ = assemble(Grid(cells), kk, hbc, 0.0)
    Ac = levels[-1].A.toarray()
    return _Hierarchy(levels, scipy.linalg.cho_factor(Ac))


def _sgs_preconditioner(A: sp.csr_matrix):
    D = A.diagonal()
    lower = spla.splu(sp.tril(A, format="csc"), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})
    upper = spla.splu(sp.triu(A, format="csc"), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})

    def apply(r):
        return upper.solve(D * lower.solve(r))

    return apply


def pcg(A, b, precond: Callable, tol: float = 1e-10, maxiter: int = 1000):
    """Preconditioned conjugate gradients; stops at ``|r| <= tol |b|``."""
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, it, res
        z = precond(r)
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise SolverError(f"PCG did not reach {tol:g} in {maxiter} iterations (residual {res:.3e})",
                      residual=res, iterations=maxiter)


def solve_diffusion(grid: Grid, k: np.ndarray, bc: BoundarySpec, f: Value = 0.0, tol: float = 1e-10,
                    preconditioner: str = "mg", maxiter: int | None = None) -> np.ndarray:
    """Cell-centre pressure, shaped like the grid.

    ``preconditioner`` is ``"mg"`` (default), ``"sgs"``, ``"none"`` or
    ``"direct"`` (sparse LU, no iteration; used as a reference).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    k = getattr(k, "k", k)
    A, b = assemble(grid, k, bc, f)
    if preconditioner == "direct":
        return spla.splu(A.tocsc()).solve(b).reshape(grid.cells)
    if maxiter is None:
        maxiter = int(10 * math.sqrt(grid.n)) + 1000
    if preconditioner == "mg":
        M = _build_hierarchy(grid, np.asarray(k, dtype=float), bc, A).vcycle
    elif preconditioner == "sgs":
        M = _sgs_preconditioner(A)
    elif preconditioner == "none":
        M = lambda r: r.copy()  # noqa: E731
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    x, _, _ = pcg(A, b, M, tol, maxiter)
    return x.reshape(grid.cells)


# ----------------------------------------------------------- quantities

def qoi_point(p: np.ndarray, grid: Grid, x: Sequence[float]) -> float:
    """Multilinear interpolation between the surrounding cell centres.

    Points closer to the boundary than the first cell centre take the value
    of the outermost centre in that direction.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.d,) or np.any(x < 0) or np.any(x > 1):
        raise ValueError(f"point {x} is not inside the unit cube of dimension {grid.d}")
    val = np.asarray(p, dtype=float)
    for i, m in enumerate(grid.cells):
        u = x[i] * m - 0.5
        if m == 1:
            val = val[0]
            continue
        j = int(np.clip(np.floor(u), 0, m - 2))
        t = float(np.clip(u - j, 0.0, 1.0))
        val = (1.0 - t) * val[j] + t * val[j + 1]
    return float(val)


def qoi_flux(p: np.ndarray, k: np.ndarray, grid: Grid, bc: BoundarySpec | None = None) -> float:
    """Outflow ``-int k dp/dx_1`` over the face x_1 = 1.

    The normal derivative is the one-sided second-order difference through
    the boundary value and the two last cell centres. The transverse
    integral is the trapezoidal rule on the face-centre values, extended to
    the face edges with zero transverse gradient.
    """
    m, h = grid.cells[0], grid.h[0]
    if m < 2:
        raise ValueError("flux evaluation needs at least 2 cells in x_1")
    k = np.asarray(getattr(k, "k", k), dtype=float)
    if bc is None:
        bc = flow_cell(grid.d)
    kind, value = bc.face(0, 1)
    if kind != "dirichlet":
        raise ValueError("flux evaluation needs Dirichlet data at x_1 = 1")
    pb = _face_values(value, grid, 0, 1)
    dp = (8.0 * pb - 9.0 * p[-1] + p[-2]) / (3.0 * h)
    flux = -k[-1] * dp
    for i in range(1, grid.d):
        c = grid.centers(i)
        nodes = np.concatenate(([0.0], c, [1.0]))
        ext = np.concatenate((flux[:1], flux, flux[-1:]), axis=0)
        flux = np.trapezoid(ext, nodes, axis=0)
    return float(flux)


def dump_pressure(p: np.ndarray, grid: Grid, path) -> None:
    """Write cell centres and pressure as CSV (debugging aid)."""
    coords = np.meshgrid(*[grid.centers(i) for i in range(grid.d)], indexing="ij")
    cols = [c.ravel() for c in coords] + [np.asarray(p).ravel()]
    header = ",".join([f"x{i + 1}" for i in range(grid.d)] + ["p"])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="")
