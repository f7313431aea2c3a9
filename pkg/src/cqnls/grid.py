"""Uniform-grid calculus kernel: quadrature, differentiation, resolvent solves.

All spatial objects in this package live on a symmetric uniform grid over
[-L, L].  Integrals use the trapezoid rule (spectrally accurate for smooth
decaying integrands on uniform grids), derivatives use finite differences of
accuracy order 4 with one-sided stencils of the same order at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.linalg import solve_banded


class GridMismatchError(ValueError):
    """Two grid functions that must share a grid do not."""


@dataclass(frozen=True)
class Grid:
    """Symmetric uniform grid on [-L, L] with N nodes.

    Nodes are built as y_j = (j - (N-1)/2) * h so that y_j = -y_{N-1-j}
    holds exactly in floating point, which parity checks rely on.
    """

    half_width: float
    n_points: int

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.n_points < 16:
            raise ValueError("need at least 16 grid points")
        if self.n_points % 2 != 0:
            raise ValueError("n_points must be even (keeps the grid symmetric)")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        j = np.arange(self.n_points) - (self.n_points - 1) / 2.0
        return j * self.spacing

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    def interior(self, fraction: float = 0.1) -> np.ndarray:
        """Boolean mask excluding the outer `fraction` of nodes on each side."""
        skip = int(fraction * self.n_points)
        mask = np.zeros(self.n_points, dtype=bool)
        mask[skip:self.n_points - skip] = True
        return mask

    def sample(self, fn, parity: str | None = None) -> "GridFn":
        return GridFn(self, np.asarray(fn(self.nodes)), parity)


@dataclass
class GridFn:
    """Sampled real or complex function on a :class:`Grid`.

    `parity` is a declaration ('even', 'odd' or None); `parity_defect`
    measures how well the values honour it.
    """

    grid: Grid
    values: np.ndarray
    parity: str | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.shape != (self.grid.n_points,):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.n_points} points)")
        if self.parity not in (None, "even", "odd"):
            raise ValueError(f"unknown parity tag {self.parity!r}")

    def parity_defect(self) -> float:
        """max_j |f(y_j) -/+ f(-y_j)| for the declared parity (0 if untagged)."""
        if self.parity is None:
            return 0.0
        mirrored = self.values[::-1]
        if self.parity == "even":
            return float(np.max(np.abs(self.values - mirrored)))
        return float(np.max(np.abs(self.values + mirrored)))

    def _binary_parity(self, other: "GridFn") -> str | None:
        if self.parity is not None and self.parity == other.parity:
            return self.parity
        return None

    def __add__(self, other):
        if isinstance(other, GridFn):
            _check_same_grid(self, other)
            return GridFn(self.grid, self.values + other.values,
                          self._binary_parity(other))
        return GridFn(self.grid, self.values + other, None)

    def __sub__(self, other):
        if isinstance(other, GridFn):
            _check_same_grid(self, other)
            return GridFn(self.grid, self.values - other.values,
                          self._binary_parity(other))
        return GridFn(self.grid, self.values - other, None)

    def __mul__(self, other):
        if isinstance(other, GridFn):
            _check_same_grid(self, other)
            if self.parity and other.parity:
                parity = "even" if self.parity == other.parity else "odd"
            else:
                parity = None
            return GridFn(self.grid, self.values * other.values, parity)
        return GridFn(self.grid, self.values * other, self.parity)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFn(self.grid, -self.values, self.parity)


def _check_same_grid(f: GridFn, g: GridFn) -> None:
    if f.grid is not g.grid and f.grid != g.grid:
        raise GridMismatchError("grid functions live on different grids")


def integrate(f: GridFn):
    """Trapezoid quadrature of f over [-L, L] (truncation of the line)."""
    return f.grid.spacing * (np.sum(f.values) - 0.5 * (f.values[0] + f.values[-1]))


def inner(f: GridFn, g: GridFn) -> float:
    """Real inner product Re(integral of f * conj(g))."""
    _check_same_grid(f, g)
    prod = np.real(f.values * np.conj(g.values))
    return float(f.grid.spacing * (np.sum(prod) - 0.5 * (prod[0] + prod[-1])))


def norm(f: GridFn) -> float:
    return float(np.sqrt(max(inner(f, f), 0.0)))


# ---------------------------------------------------------------------------
# finite differences, accuracy order 4

@lru_cache(maxsize=None)
def _fd_weights(offsets: tuple, order: int) -> np.ndarray:
    """Stencil weights for the `order`-th derivative on integer offsets.

    Solved from the Vandermonde moment conditions; exact for polynomials of
    degree < len(offsets).
    """
    offs = np.array(offsets, dtype=float)
    n = len(offs)
    V = np.vander(offs, n, increasing=True).T   # V[m, j] = offs[j]**m
    rhs = np.zeros(n)
    rhs[order] = float(math.factorial(order))
    return np.linalg.solve(V, rhs)


_CENTRAL_HALF = {1: 2, 2: 2, 3: 3, 4: 3}   # half-width giving accuracy >= 4


def diff(f: GridFn, order: int) -> GridFn:
    """Finite-difference derivative of accuracy order 4 (one-sided at ends)."""
    if order not in (1, 2, 3, 4):
        raise ValueError("derivative order must be in 1..4")
    n = f.grid.n_points
    h = f.grid.spacing
    vals = f.values
    out = np.zeros_like(vals)

    r = _CENTRAL_HALF[order]
    w = _fd_weights(tuple(range(-r, r + 1)), order)
    for k, wk in enumerate(w):
        o = k - r
        if wk != 0.0:
            out[r:n - r] += wk * vals[r + o:n - r + o]

    # one-sided rows of the same accuracy: order + 4 points
    npts = order + 4
    for i in range(r):
        wl = _fd_weights(tuple(range(-i, npts - i)), order)
        out[i] = np.dot(wl, vals[:npts])
        wr = _fd_weights(tuple(range(-(npts - 1 - i), i + 1)), order)
        out[n - 1 - i] = np.dot(wr, vals[n - npts:])

    if f.parity is None:
        parity = None
    elif order % 2 == 0:
        parity = f.parity
    else:
        parity = "odd" if f.parity == "even" else "even"
    return GridFn(f.grid, out / h**order, parity)


def solve_shifted(c: float, rhs: GridFn) -> GridFn:
    """Solve (-d^2/dy^2 + c) g = rhs with homogeneous Dirichlet walls.

    Banded solve on the 4th-order five-point Laplacian; the two rows next to
    each wall fall back to the 3-point stencil (the boundary layer is outside
    every tolerance region in this package).
    """
    if not c > 0:
        raise ValueError("shift c must be positive for an invertible resolvent")
    n = rhs.grid.n_points
    h2 = rhs.grid.spacing ** 2

    # five diagonals, LAPACK banded layout (two super, two sub)
    ab = np.zeros((5, n))
    ab[0, 2:] = 1.0 / (12 * h2)      # +2 diagonal
    ab[1, 1:] = -16.0 / (12 * h2)    # +1
    ab[2, :] = 30.0 / (12 * h2) + c  # main
    ab[3, :-1] = -16.0 / (12 * h2)   # -1
    ab[4, :-2] = 1.0 / (12 * h2)     # -2

    # 2nd-order rows at j=1 and j=n-2
    ab[0, 3] = 0.0
    ab[1, 2] = -1.0 / h2
    ab[2, 1] = 2.0 / h2 + c
    ab[3, 0] = -1.0 / h2
    ab[4, n - 4] = 0.0
    ab[3, n - 3] = -1.0 / h2
    ab[2, n - 2] = 2.0 / h2 + c
    ab[1, n - 1] = -1.0 / h2

    # Dirichlet rows
    ab[2, 0] = 1.0
    ab[1, 1] = 0.0
    ab[0, 2] = 0.0
    ab[2, n - 1] = 1.0
    ab[3, n - 2] = 0.0
    ab[4, n - 3] = 0.0

    b = np.array(rhs.values, dtype=complex if np.iscomplexobj(rhs.values) else float)
    b[0] = 0.0
    b[-1] = 0.0
    sol = solve_banded((2, 2), ab, b)
    return GridFn(rhs.grid, sol, rhs.parity)
