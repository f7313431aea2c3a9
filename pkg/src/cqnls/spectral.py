"""Internal-mode eigenvalue problem and the auxiliary linear solves.

The coupled problem

    L+ V1 = lambda V2,   L- V2 = lambda V1

is solved by the factorisation route: conjugate to the weakly-coupled pair
(M+, M-), diagonalise the even combination (Z1, Z2) = ((W1+W2)/2, (W1-W2)/2),

    -Z1'' + alpha^2 Z1 - (omega/3) Q^4 Z1 + (2 omega/3) Q^4 Z2 = 0
    -Z2'' + kappa^2 Z2 + (2 omega/3) Q^4 Z1 - (omega/3) Q^4 Z2 = 0,

and reduce via the rank-one structure of the kernel operator to a scalar
root problem s(alpha, omega) = alpha + (omega/2) r(alpha, omega) = 0.
An independent banded finite-difference eigensolver cross-checks the result.

Eigenfunctions are reconstructed as kernel integrals on any requested grid;
first derivatives come from high-order finite differences of those smooth
values, and all higher derivatives from the governing ODEs, so downstream
fourth-order operator coefficients carry no compounded FD noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .grid import Grid, GridFn, diff, inner, integrate, norm
from .profiles import (a_coefficient, dq_domega_values, profile_calculus,
                       q_values, qprime_values, xi_values)


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""


class RootBracketError(RuntimeError):
    """The scalar root bracket shows no sign change."""


class ModeInvalidError(RuntimeError):
    """A constructed internal mode violates one of its invariants."""


# ---------------------------------------------------------------------------
# Birman-Schwinger kernel machinery.
#
# Everything is even, so kernels are folded onto the half line z >= 0:
# a full-line convolution against even data becomes an integral of
# k(y, z) + k(y, -z) over z >= 0.

_C_HALF = np.sqrt(1.0 + np.sqrt(3.0) / 2.0)


@dataclass(frozen=True)
class KernelGrid:
    """Half-line quadrature grid [0, L] for the dense kernel solves."""

    half_width: float = 40.0
    n_points: int = 1024

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.half_width, self.n_points)

    @property
    def spacing(self) -> float:
        return self.half_width / (self.n_points - 1)

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w


DEFAULT_KERNEL_GRID = KernelGrid()


def _sqrt_abs_p(omega: float, y: np.ndarray):
    """Entries of |P|^(1/2) = (Q^2/sqrt(3)) [[c, -1/2c], [-1/2c, c]]."""
    Q2 = q_values(omega, y) ** 2
    return Q2 / np.sqrt(3.0) * _C_HALF, -Q2 / (np.sqrt(3.0) * 2.0 * _C_HALF)


def _folded_resolvent_kernels(alpha: float, y: np.ndarray, z: np.ndarray):
    """Folded kernels of N_{alpha,omega}: channel 1 is (e^{-a|y-z|}-1)/(2a)
    (extended by -|y-z|/2 at alpha = 0), channel 2 is e^{-kappa|y-z|}/(2 kappa).
    """
    kappa = np.sqrt(2.0 - alpha * alpha)
    dm = np.abs(y[:, None] - z[None, :])
    dp = np.abs(y[:, None] + z[None, :])
    if alpha > 1e-12:
        n1 = (np.expm1(-alpha * dm) + np.expm1(-alpha * dp)) / (2.0 * alpha)
    else:
        n1 = -(dm + dp) / 2.0
    n2 = (np.exp(-kappa * dm) + np.exp(-kappa * dp)) / (2.0 * kappa)
    return n1, n2


def _bs_solve(alpha: float, omega: float, kgrid: KernelGrid):
    """Solve (1 + omega M_{alpha,omega}) Psi = P^(1/2) e_u on the kernel grid.

    Returns (r, Psi) with r = p_omega(Psi), the rank-one coupling scalar.
    """
    z = kgrid.nodes
    wq = kgrid.weights
    m = kgrid.n_points
    B11, B12 = _sqrt_abs_p(omega, z)     # |P|^{1/2}; P^{1/2} swaps its rows
    n1, n2 = _folded_resolvent_kernels(alpha, z, z)

    def block(a1, a2, b1, b2):
        return a1[:, None] * (n1 * (b1 * wq)[None, :]) \
            + a2[:, None] * (n2 * (b2 * wq)[None, :])

    M = np.empty((2 * m, 2 * m))
    M[:m, :m] = block(B12, B11, B11, B12)
    M[:m, m:] = block(B12, B11, B12, B11)
    M[m:, :m] = block(B11, B12, B11, B12)
    M[m:, m:] = block(B11, B12, B12, B11)

    rhs = np.concatenate([B12, B11])     # P^(1/2) e_u
    A = omega * M
    A[np.diag_indices_from(A)] += 1.0
    try:
        psi = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"kernel system singular at alpha={alpha}, "
                               f"omega={omega}") from exc
    r = 2.0 * float(np.sum(wq * (B11 * psi[:m] + B12 * psi[m:])))
    return r, psi


def bs_r(alpha: float, omega: float,
         kgrid: KernelGrid = DEFAULT_KERNEL_GRID) -> float:
    """Coupling scalar r(alpha, omega); r(0, 0) = -(1/3) * integral(Q0^4) = -16/9."""
    return _bs_solve(alpha, omega, kgrid)[0]


def bs_scalar(alpha: float, omega: float,
              kgrid: KernelGrid = DEFAULT_KERNEL_GRID) -> float:
    """Root function s(alpha, omega) = alpha + (omega/2) r(alpha, omega)."""
    if not (0.0 <= alpha < 0.5):
        raise ValueError("alpha out of the perturbative window [0, 0.5)")
    if not (0.0 <= omega <= 0.1):
        raise ValueError("omega out of the supported window [0, 0.1]")
    if omega == 0.0:
        return alpha
    return alpha + 0.5 * omega * _bs_solve(alpha, omega, kgrid)[0]


def solve_alpha(omega: float, kgrid: KernelGrid = DEFAULT_KERNEL_GRID,
                tol: float = 1e-12) -> float:
    """Root of s(., omega) in (0, 2 omega).

    The bracket [1e-6, 2 omega] is checked for a sign change first; the root
    is then polished by the unit-slope iteration alpha <- alpha - s(alpha)
    (ds/dalpha is 1 + O(omega)), falling back to bisection if an iterate
    leaves the bracket.
    """
    if not (0.0 < omega <= 0.1):
        raise ValueError("omega must lie in (0, 0.1]")
    lo, hi = 1e-6, 2.0 * omega
    s_lo = bs_scalar(lo, omega, kgrid)
    s_hi = bs_scalar(hi, omega, kgrid)
    if s_lo * s_hi > 0:
        raise RootBracketError(
            f"no sign change: s({lo}) = {s_lo:.3e}, s({hi}) = {s_hi:.3e}")
    a = 8.0 * omega / 9.0
    s = bs_scalar(a, omega, kgrid)
    for _ in range(60):
        if abs(s) <= tol:
            return a
        a_new = a - s
        if not (lo < a_new < hi):
            a_new = 0.5 * (lo + hi)
        s_new = bs_scalar(a_new, omega, kgrid)
        if s_new * s_lo < 0:
            hi = a_new
        else:
            lo, s_lo = a_new, s_new
        a, s = a_new, s_new
    raise ConvergenceError(f"root iteration stalled at |s| = {abs(s):.2e}")


# ---------------------------------------------------------------------------
# internal mode construction

def default_mode_grid(alpha: float, target_h: float = 0.1,
                      max_points: int = 65536) -> Grid:
    """Box wide enough that e^(-alpha L) <= 1e-8 (L = max(40, 20/alpha))."""
    L = max(40.0, 20.0 / alpha)
    n = int(np.ceil(2.0 * L / target_h))
    n += n % 2
    return Grid(L, min(n, max_points))


def _odd_antiderivative(y: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """int_0^y rhs(t) dt via the cubic-spline antiderivative (odd output
    for even rhs; the grid has no node at 0, the spline evaluates there)."""
    A = CubicSpline(y, rhs).antiderivative()
    return A(y) - A(0.0)


def _exp_moments(beta: float, x: np.ndarray):
    """I0 = int_0^x e^{-beta t} dt and I1 = int_0^x t e^{-beta t} dt,
    cancellation-safe for beta x << 1."""
    u = beta * x
    eu = np.exp(-u)
    sm = -np.expm1(-u)
    I0 = sm / beta
    I1 = (sm - u * eu) / (beta * beta)
    return I0, I1


def _kink_correction(beta: float, p: np.ndarray, z: np.ndarray,
                     g: np.ndarray) -> np.ndarray:
    """Trapezoid correction for the diagonal kink of e^{-beta |p - z|}.

    For each target p inside the kernel range, the quadrature interval
    containing p is replaced by the exact integral of the kernel against the
    linear interpolant of the density g.  Plain trapezoid is only O(h^2)
    *per node* across the kink, which leaves node-alignment noise that
    downstream difference operators amplify; the exact patch removes it.
    """
    h = z[1] - z[0]
    inside = (p > z[0]) & (p < z[-1])
    if not np.any(inside):
        return np.zeros_like(p)
    pi = p[inside]
    j = np.clip(np.searchsorted(z, pi) - 1, 0, len(z) - 2)
    zj = z[j]
    a = pi - zj
    b = h - a
    gj, gj1 = g[j], g[j + 1]
    I0a, I1a = _exp_moments(beta, a)
    I0b, I1b = _exp_moments(beta, b)
    exact = (gj * (b * I0a + I1a) + gj1 * (a * I0a - I1a)
             + gj * (b * I0b - I1b) + gj1 * (a * I0b + I1b)) / h
    trap = 0.5 * h * (np.exp(-beta * a) * gj + np.exp(-beta * b) * gj1)
    out = np.zeros_like(p)
    out[inside] = exact - trap
    return out


def _folded_apply(beta: float, kind: str, p: np.ndarray, z: np.ndarray,
                  wq: np.ndarray, g: np.ndarray, chunk: int = 4096,
                  kink_patch: bool = True) -> np.ndarray:
    """Quadrature of the folded kernel against density g:

        int_0^inf [k(|p - z|) + k(p + z)] g(z) dz,  p = |y| >= 0,

    with k(d) = e^{-beta d} ('exp') or (e^{-beta d} - 1) ('expm1'; the -1
    part is linear-exact under trapezoid so only the exponential needs the
    kink patch on the interval containing p).
    """
    out = np.empty_like(p)
    gw = g * wq
    for start in range(0, len(p), chunk):
        sl = slice(start, start + chunk)
        dm = np.abs(p[sl, None] - z[None, :])
        dp = p[sl, None] + z[None, :]
        if kind == "expm1":
            kern = np.expm1(-beta * dm) + np.expm1(-beta * dp)
        else:
            kern = np.exp(-beta * dm) + np.exp(-beta * dp)
        out[sl] = kern @ gw
    if kink_patch:
        out += _kink_correction(beta, p, z, g)
    return out


def _upsampled_density(kgrid: KernelGrid, g: np.ndarray, refine: int = 8,
                       floor: float = 1e-28):
    """Spline the (smooth, exponentially decaying) kernel-grid density onto
    a `refine`-times finer half-line grid, truncated to its support.

    Trapezoid across the kernel's diagonal kink is O(h^2) per node, so a
    finer evaluation grid suppresses the node-alignment noise that
    downstream difference operators amplify.
    """
    gmax = np.max(np.abs(g))
    live = np.nonzero(np.abs(g) > floor * gmax)[0]
    cut = kgrid.nodes[min(live[-1] + 1, kgrid.n_points - 1)] if len(live) else kgrid.half_width
    cut = max(cut, 0.6 * kgrid.half_width)
    m = int(np.ceil(cut / kgrid.spacing)) * refine + 1
    z = np.linspace(0.0, cut, m)
    wq = np.full(m, z[1] - z[0])
    wq[0] = wq[-1] = 0.5 * (z[1] - z[0])
    return z, wq, CubicSpline(kgrid.nodes, g)(z)


@dataclass
class InternalMode:
    """Internal-mode bundle (omega, alpha, lambda, kappa, eigenfunctions).

    Carries derivative towers W_j, W_j', ..., W_j'''' (built from the
    defining ODEs, not repeated differencing) so fourth-order coefficient
    fields downstream stay clean.  Normalisation is the kernel-branch one:
    Z -> e_u as omega -> 0, i.e. W_j ~ e^(-alpha|y|) with unit amplitude.
    """

    omega: float
    alpha: float
    grid: Grid
    Z1: GridFn
    Z2: GridFn
    W1: GridFn
    W2: GridFn
    V1: GridFn
    V2: GridFn
    w_towers: dict
    v_towers: dict
    residuals: dict
    normalization: str = "birman_schwinger"

    @property
    def lam(self) -> float:
        return 1.0 - self.alpha ** 2

    @property
    def kappa(self) -> float:
        return float(np.sqrt(2.0 - self.alpha ** 2))

    @property
    def tau(self) -> float:
        return float(np.sqrt(2.0 * self.lam - 1.0))


def build_internal_mode(omega: float, grid: Grid | None = None,
                        kgrid: KernelGrid = DEFAULT_KERNEL_GRID,
                        validate: bool = True,
                        residual_tol: float = 2e-4) -> InternalMode:
    """Construct the internal mode at frequency omega.

    The kernel solve fixes alpha and the auxiliary density; Z1, Z2 are then
    evaluated on `grid` (a default wide box if omitted) by kink-corrected
    kernel quadrature, their first derivatives by antidifferentiating the
    governing ODEs from y = 0 (evenness gives Z'(0) = 0), and W, V follow
    from the factorisation chain.  Every invariant is checked when
    `validate` is set.
    """
    alpha = solve_alpha(omega, kgrid)
    kappa = float(np.sqrt(2.0 - alpha * alpha))
    lam = 1.0 - alpha * alpha
    if grid is None:
        grid = default_mode_grid(alpha)

    _, psi = _bs_solve(alpha, omega, kgrid)
    m = kgrid.n_points
    B11, B12 = _sqrt_abs_p(omega, kgrid.nodes)
    Y1 = B11 * psi[:m] + B12 * psi[m:]
    Y2 = B12 * psi[:m] + B11 * psi[m:]

    y = grid.nodes
    half = grid.n_points // 2
    ay_half = y[half:]                     # grid symmetry: evaluate one side
    ze, we, Y1e = _upsampled_density(kgrid, Y1)
    _, _, Y2e = _upsampled_density(kgrid, Y2)
    k1h = _folded_apply(alpha, "expm1", ay_half, ze, we, Y1e)
    k2h = _folded_apply(kappa, "exp", ay_half, ze, we, Y2e)
    z1 = 1.0 - omega / (2.0 * alpha) * np.concatenate([k1h[::-1], k1h])
    z2 = -omega / (2.0 * kappa) * np.concatenate([k2h[::-1], k2h])

    pc = profile_calculus(omega, y)
    Q4, dQ4, d2Q4 = pc["Q4"], pc["dQ4"], pc["d2Q4"]
    c = omega / 3.0
    a2, q2c = alpha * alpha, kappa * kappa
    z1_2 = a2 * z1 - c * Q4 * z1 + 2 * c * Q4 * z2
    z2_2 = q2c * z2 + 2 * c * Q4 * z1 - c * Q4 * z2
    # first derivatives by antidifferentiation of the curvature fields:
    # integration smooths quadrature noise instead of amplifying it
    dz1 = _odd_antiderivative(y, z1_2)
    dz2 = _odd_antiderivative(y, z2_2)
    z1_3 = a2 * dz1 - c * (dQ4 * z1 + Q4 * dz1) + 2 * c * (dQ4 * z2 + Q4 * dz2)
    z2_3 = q2c * dz2 + 2 * c * (dQ4 * z1 + Q4 * dz1) - c * (dQ4 * z2 + Q4 * dz2)
    z1_4 = a2 * z1_2 - c * (d2Q4 * z1 + 2 * dQ4 * dz1 + Q4 * z1_2) \
        + 2 * c * (d2Q4 * z2 + 2 * dQ4 * dz2 + Q4 * z2_2)
    z2_4 = q2c * z2_2 + 2 * c * (d2Q4 * z1 + 2 * dQ4 * dz1 + Q4 * z1_2) \
        - c * (d2Q4 * z2 + 2 * dQ4 * dz2 + Q4 * z2_2)

    w_towers = {
        (1, 0): z1 + z2, (1, 1): dz1 + dz2, (1, 2): z1_2 + z2_2,
        (1, 3): z1_3 + z2_3, (1, 4): z1_4 + z2_4,
        (2, 0): z1 - z2, (2, 1): dz1 - dz2, (2, 2): z1_2 - z2_2,
        (2, 3): z1_3 - z2_3, (2, 4): z1_4 - z2_4,
    }

    # V1 = (S*)^2 W1 = W1'' + 2 xi W1' + (Q''/Q) W1, then V2 from L+ V1.
    xi, xip, xipp = pc["xi"], pc["xip"], pc["xipp"]
    QQ, QQp, QQpp = pc["QQ"], pc["QQp"], pc["QQpp"]
    W1k = [w_towers[(1, k)] for k in range(5)]
    v1 = W1k[2] + 2 * xi * W1k[1] + QQ * W1k[0]
    v1_1 = W1k[3] + 2 * xip * W1k[1] + 2 * xi * W1k[2] + QQp * W1k[0] + QQ * W1k[1]
    v1_2 = (W1k[4] + 2 * xipp * W1k[1] + 4 * xip * W1k[2] + 2 * xi * W1k[3]
            + QQpp * W1k[0] + 2 * QQp * W1k[1] + QQ * W1k[2])
    Q2 = pc["Q2"]
    v2 = (-v1_2 + v1 - 3 * Q2 * v1 - 5 * omega * Q4 * v1) / lam
    v_towers = {(1, 0): v1, (1, 1): v1_1, (1, 2): v1_2, (2, 0): v2}

    mode = InternalMode(
        omega=omega, alpha=alpha, grid=grid,
        Z1=GridFn(grid, z1, "even"), Z2=GridFn(grid, z2, "even"),
        W1=GridFn(grid, w_towers[(1, 0)], "even"),
        W2=GridFn(grid, w_towers[(2, 0)], "even"),
        V1=GridFn(grid, v1, "even"), V2=GridFn(grid, v2, "even"),
        w_towers=w_towers, v_towers=v_towers, residuals={})

    mode.residuals = _mode_residuals(mode)
    if validate:
        _validate_mode(mode, residual_tol)
    return mode


def _mode_residuals(mode: InternalMode) -> dict:
    """Eigen-equation residuals measured with the package FD operators."""
    from .operators import OperatorBundle
    from .profiles import make_profile
    bundle = OperatorBundle(make_profile(mode.omega, mode.grid))
    lam = mode.lam
    res = {}
    nW1, nV1 = norm(mode.W1), norm(mode.V1)
    res["MpW1"] = norm(bundle.apply("M+", mode.W1) - lam * mode.W2) / nW1
    res["MmW2"] = norm(bundle.apply("M-", mode.W2) - lam * mode.W1) / nW1
    res["LpV1"] = norm(bundle.apply("L+", mode.V1) - lam * mode.V2) / nV1
    res["LmV2"] = norm(bundle.apply("L-", mode.V2) - lam * mode.V1) / nV1
    res["V1V2"] = inner(mode.V1, mode.V2)
    res["W1W2"] = inner(mode.W1, mode.W2)
    return res


def _validate_mode(mode: InternalMode, tol: float) -> None:
    problems = []
    if not (0.0 < mode.alpha < 1.0):
        problems.append(f"alpha = {mode.alpha} outside (0, 1)")
    if not (0.0 < mode.lam < 1.0):
        problems.append(f"lambda = {mode.lam} outside (0, 1)")
    if np.any(mode.W2.values <= 0):
        problems.append("W2 is not everywhere positive")
    for key in ("MpW1", "MmW2", "LpV1", "LmV2"):
        if mode.residuals[key] > tol:
            problems.append(f"residual {key} = {mode.residuals[key]:.2e} > {tol}")
    for f in (mode.W1, mode.W2, mode.V1, mode.V2):
        if f.parity_defect() > 1e-9 * max(1.0, float(np.max(np.abs(f.values)))):
            problems.append("eigenfunction parity defect above tolerance")
    # tail normalisation |W_j e^{alpha|y|} - 1| = O(omega) on |y| <= L/2
    half = np.abs(mode.grid.nodes) <= mode.grid.half_width / 2
    for name, f in (("W1", mode.W1), ("W2", mode.W2)):
        dev = np.max(np.abs(f.values[half] * np.exp(mode.alpha * np.abs(mode.grid.nodes[half])) - 1.0))
        if dev > 30.0 * mode.omega:
            problems.append(f"{name} tail deviation {dev:.3f} exceeds 30*omega")
    # <V1, V2> = 1/alpha + O(1)
    if abs(mode.residuals["V1V2"] - 1.0 / mode.alpha) > 10.0:
        problems.append(
            f"<V1,V2> = {mode.residuals['V1V2']:.3f} vs 1/alpha = {1/mode.alpha:.3f}")
    if problems:
        raise ModeInvalidError("; ".join(problems))


# ---------------------------------------------------------------------------
# independent finite-difference eigensolver

def _second_derivative_matrix(grid: Grid) -> sp.csr_matrix:
    """4th-order five-point d^2/dy^2 with Dirichlet walls (3-point next to them)."""
    n = grid.n_points
    h2 = grid.spacing ** 2
    main = np.full(n, -30.0 / (12 * h2))
    off1 = np.full(n - 1, 16.0 / (12 * h2))
    off2 = np.full(n - 2, -1.0 / (12 * h2))
    A = sp.diags([off2, off1, main, off1, off2], [-2, -1, 0, 1, 2], format="lil")
    for j in (0, 1, n - 2, n - 1):
        A.rows[j] = []
        A.data[j] = []
    for j in (1, n - 2):
        A[j, j] = -2.0 / h2
        A[j, j - 1] = 1.0 / h2
        A[j, j + 1] = 1.0 / h2
    A[0, 0] = -2.0 / h2
    A[0, 1] = 1.0 / h2
    A[n - 1, n - 1] = -2.0 / h2
    A[n - 1, n - 2] = 1.0 / h2
    return A.tocsr()


def direct_eigen_oracle(omega: float, grid: Grid | None = None,
                        reference: InternalMode | None = None):
    """Banded eigensolve of M+ M- near the internal-mode eigenvalue.

    Discretises the product operator, shift-inverts at the predicted
    lambda^2 = (1 - (8 omega/9)^2)^2 and returns (lambda, W2) with the
    eigenvector rescaled to match the kernel-branch normalisation at y = 0
    (or to the supplied reference mode).
    """
    if grid is None:
        grid = default_mode_grid(solve_alpha(omega) if reference is None
                                 else reference.alpha)
    y = grid.nodes
    Q4 = q_values(omega, y) ** 4
    D2 = _second_derivative_matrix(grid)
    eye = sp.identity(grid.n_points, format="csr")
    Mp = -D2 + eye + sp.diags(omega / 3.0 * Q4)
    Mm = -D2 + eye - sp.diags(omega * Q4)
    A = (Mp @ Mm).tocsc()
    sigma = (1.0 - (8.0 * omega / 9.0) ** 2) ** 2
    try:
        vals, vecs = spla.eigs(A, k=1, sigma=sigma, which="LM", tol=0)
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        raise ConvergenceError("shift-invert iteration failed") from exc
    lam2 = float(vals.real[0])
    if lam2 <= 0:
        raise ConvergenceError(f"eigenvalue of product operator nonpositive: {lam2}")
    lam = float(np.sqrt(lam2))
    w2 = vecs[:, 0].real
    mid = grid.n_points // 2
    anchor = 1.0 if reference is None else reference.W2.values[mid]
    w2 = w2 / w2[mid] * anchor
    return lam, GridFn(grid, w2, "even")


# ---------------------------------------------------------------------------
# bounded golden-rule pair (g1, g2)

@dataclass
class GoldenRulePair:
    """Bounded even solutions of L+ g1 = 2 lambda g2, L- g2 = 2 lambda g1.

    h1, h2 are the transformed pair (M+ h1 = 2 lambda h2, ...), close to
    -cos(tau y); g1 = (S*)^2 h1 and g2 = L+ g1 / (2 lambda).
    """

    mode: InternalMode
    g1: GridFn
    g2: GridFn
    h1: GridFn
    h2: GridFn
    iterations: int
    orthogonality: dict

    @property
    def tau(self) -> float:
        return self.mode.tau


def solve_g(mode: InternalMode, aux_points: int = 4096,
            aux_width: float = 40.0, tol: float = 1e-13,
            max_iter: int = 200) -> GoldenRulePair:
    """Solve the bounded-pair integral equation by Picard iteration.

    The fixed point runs on an auxiliary half-line grid (the source carries a
    Q^4 weight, so it is compactly supported there); saturating cumulants are
    then spline-evaluated on the mode grid and the derivative towers are
    completed from the governing ODEs.
    """
    omega, lam = mode.omega, mode.lam
    tau = mode.tau
    sig = float(np.sqrt(2.0 + tau * tau))

    xg = np.linspace(0.0, aux_width, aux_points)
    Qg4 = q_values(omega, xg) ** 4
    cg = np.cos(tau * xg)
    sg = np.sin(tau * xg)

    def cum(f):
        return CubicSpline(xg, f).antiderivative()(xg)

    def sine_channel(f):
        C, S = cum(cg * f), cum(sg * f)
        return sg * C - cg * S, C, S

    def exp_channel(f):
        P = cum(np.exp(sig * xg) * f)
        Rf = cum(np.exp(-sig * xg) * f)
        val = np.exp(-sig * xg) * P + np.exp(sig * xg) * (Rf[-1] - Rf) \
            + np.exp(-sig * xg) * Rf[-1]
        return val, P, Rf

    f1 = omega / (3.0 * tau) * sine_channel(Qg4 * cg)[0]
    f2 = omega / (3.0 * sig) * exp_channel(Qg4 * cg)[0]
    l1, l2 = f1.copy(), f2.copy()
    it = 0
    for it in range(1, max_iter + 1):
        n1 = -omega / (3.0 * tau) * sine_channel(Qg4 * (l1 - 2.0 * l2))[0] + f1
        n2 = omega / (6.0 * sig) * exp_channel(Qg4 * (-2.0 * l1 + l2))[0] + f2
        delta = max(np.max(np.abs(n1 - l1)), np.max(np.abs(n2 - l2)))
        l1, l2 = n1, n2
        if delta < tol:
            break
    else:
        raise ConvergenceError(
            f"Picard iteration stalled after {max_iter} steps (delta={delta:.2e})")

    # cumulants of the converged total sources, for evaluation anywhere
    F1 = Qg4 * (l1 - 2.0 * l2) - Qg4 * cg
    F2 = Qg4 * (-2.0 * l1 + l2) + 2.0 * Qg4 * cg
    _, C1, S1 = sine_channel(F1)
    _, P2, R2 = exp_channel(F2)

    y = mode.grid.nodes
    ay = np.abs(y)
    ayc = np.minimum(ay, aux_width)
    C1i = CubicSpline(xg, C1)(ayc)
    S1i = CubicSpline(xg, S1)(ayc)
    P2i = CubicSpline(xg, P2)(ayc)
    R2i = CubicSpline(xg, R2)(ayc)
    R2tot = R2[-1]

    ct, st = np.cos(tau * ay), np.sin(tau * ay)
    l1m = -omega / (3.0 * tau) * (st * C1i - ct * S1i)
    l1m_d = -omega / 3.0 * (ct * C1i + st * S1i) * np.sign(y)
    damp = np.exp(-sig * np.maximum(ay - aux_width, 0.0))
    em = np.exp(-sig * ayc)
    J = (em * P2i + np.exp(sig * ayc) * (R2tot - R2i) + em * R2tot) * damp
    Jd = sig * (-em * P2i + np.exp(sig * ayc) * (R2tot - R2i) - em * R2tot) \
        * damp * np.sign(y)
    l2m = omega / (6.0 * sig) * J
    l2m_d = omega / (6.0 * sig) * Jd

    pc = profile_calculus(omega, y)
    Q2, Q4, dQ4, d2Q4 = pc["Q2"], pc["Q4"], pc["dQ4"], pc["d2Q4"]
    xi, xip, xipp = pc["xi"], pc["xip"], pc["xipp"]
    QQ, QQp, QQpp = pc["QQ"], pc["QQp"], pc["QQpp"]
    om3 = omega / 3.0
    tau2 = tau * tau
    cty, sty = np.cos(tau * y), np.sin(tau * y)

    l1_2 = -tau2 * l1m - om3 * Q4 * (l1m - 2 * l2m) + om3 * Q4 * cty
    l2_2 = (2 + tau2) * l2m - om3 * Q4 * (-2 * l1m + l2m) - 2 * om3 * Q4 * cty
    l1_3 = -tau2 * l1m_d - om3 * (dQ4 * (l1m - 2 * l2m) + Q4 * (l1m_d - 2 * l2m_d)) \
        + om3 * (dQ4 * cty - tau * Q4 * sty)
    l2_3 = (2 + tau2) * l2m_d - om3 * (dQ4 * (-2 * l1m + l2m) + Q4 * (-2 * l1m_d + l2m_d)) \
        - 2 * om3 * (dQ4 * cty - tau * Q4 * sty)
    l1_4 = -tau2 * l1_2 - om3 * (d2Q4 * (l1m - 2 * l2m) + 2 * dQ4 * (l1m_d - 2 * l2m_d)
                                 + Q4 * (l1_2 - 2 * l2_2)) \
        + om3 * (d2Q4 * cty - 2 * tau * dQ4 * sty - tau2 * Q4 * cty)
    l2_4 = (2 + tau2) * l2_2 - om3 * (d2Q4 * (-2 * l1m + l2m) + 2 * dQ4 * (-2 * l1m_d + l2m_d)
                                      + Q4 * (-2 * l1_2 + l2_2)) \
        - 2 * om3 * (d2Q4 * cty - 2 * tau * dQ4 * sty - tau2 * Q4 * cty)

    # l_1 = lcheck_1 - cos(tau y); assemble h1 = l_1 + l_2, h2 = l_1 - l_2
    L1 = [l1m - cty, l1m_d + tau * sty, l1_2 + tau2 * cty,
          l1_3 - tau2 * tau * sty, l1_4 - tau2 * tau2 * cty]
    L2 = [l2m, l2m_d, l2_2, l2_3, l2_4]
    h1k = [a + b for a, b in zip(L1, L2)]
    h2k = [a - b for a, b in zip(L1, L2)]

    g1 = h1k[2] + 2 * xi * h1k[1] + QQ * h1k[0]
    g1_2 = (h1k[4] + 2 * xipp * h1k[1] + 4 * xip * h1k[2] + 2 * xi * h1k[3]
            + QQpp * h1k[0] + 2 * QQp * h1k[1] + QQ * h1k[2])
    g2 = (-g1_2 + g1 - 3 * Q2 * g1 - 5 * omega * Q4 * g1) / (2.0 * lam)

    pair = GoldenRulePair(
        mode=mode,
        g1=GridFn(mode.grid, g1, "even"),
        g2=GridFn(mode.grid, g2, "even"),
        h1=GridFn(mode.grid, h1k[0], "even"),
        h2=GridFn(mode.grid, h2k[0], "even"),
        iterations=it,
        orthogonality={})
    pair.orthogonality = _g_orthogonality(pair)
    return pair


def _g_orthogonality(pair: GoldenRulePair) -> dict:
    """Residuals of the four orthogonality relations, relative to the
    absolute-integrand mass of each pairing."""
    mode = pair.mode
    grid = mode.grid
    Qfn = GridFn(grid, q_values(mode.omega, grid.nodes), "even")
    lamQ = lambda_omega_Q(mode.omega, grid)

    def rel(f, g):
        raw = inner(f, g)
        scale = integrate(GridFn(grid, np.abs(f.values * g.values)))
        return raw / max(scale, 1e-300)

    return {
        "g1_Q": rel(pair.g1, Qfn),
        "g2_LQ": rel(pair.g2, lamQ),
        "g1_V2": rel(pair.g1, mode.V2),
        "g2_V1": rel(pair.g2, mode.V1),
    }


def lambda_omega_Q(omega: float, grid: Grid) -> GridFn:
    """Scaling-family direction Lambda_omega Q = Q/2 + y Q'/2 + omega dQ/domega."""
    y = grid.nodes
    vals = 0.5 * q_values(omega, y) + 0.5 * y * qprime_values(omega, y) \
        + omega * dq_domega_values(omega, y)
    return GridFn(grid, vals, "even")


# ---------------------------------------------------------------------------
# nonhomogeneous Fredholm system for (A1, A2)

class InconsistentSystemError(RuntimeError):
    """Compatibility condition of a singular system fails."""


def solve_A(mode: InternalMode):
    """Solve L+ A1 - lambda A2 = -F1, L- A2 - lambda A1 = F2.

    F = -(2/<V1,V2>) Q (Lambda_omega Q) (1 + 2 omega Q); F1 = F V2, F2 = F V1.
    The block operator annihilates (V1, V2), so the system is solved in
    bordered form with the kernel direction pinned by <A1, V2> = 0 after the
    compatibility integral is verified.
    """
    grid = mode.grid
    omega, lam = mode.omega, mode.lam
    y = grid.nodes
    n = grid.n_points
    Q = q_values(omega, y)
    lamQ = lambda_omega_Q(omega, grid).values
    v12 = inner(mode.V1, mode.V2)
    F = -(2.0 / v12) * Q * lamQ * (1.0 + 2.0 * omega * Q)
    F1 = F * mode.V2.values
    F2 = F * mode.V1.values

    compat = integrate(GridFn(grid, -F1 * mode.V1.values + F2 * mode.V2.values))
    scale = integrate(GridFn(grid, np.abs(F1 * mode.V1.values)))
    if abs(compat) > 1e-8 * max(scale, 1e-300):
        raise InconsistentSystemError(
            f"compatibility integral {compat:.3e} vs scale {scale:.3e}")

    Q4 = Q ** 4
    Q2 = Q * Q
    D2 = _second_derivative_matrix(grid)
    eye = sp.identity(n, format="csr")
    Lp = -D2 + eye + sp.diags(-3.0 * Q2 - 5.0 * omega * Q4)
    Lm = -D2 + eye + sp.diags(-Q2 - omega * Q4)
    block = sp.bmat([[Lp, -lam * eye], [-lam * eye, Lm]], format="lil")

    # bordered system: kernel column (V1, V2), constraint row <A1, V2> = 0
    w = grid.weights
    kcol = np.concatenate([mode.V1.values, mode.V2.values])
    crow = np.concatenate([w * mode.V2.values, np.zeros(n)])
    bordered = sp.bmat(
        [[block, kcol[:, None]], [sp.csr_matrix(crow[None, :]), None]],
        format="csc")
    rhs = np.concatenate([-F1, F2, [0.0]])
    sol = spla.spsolve(bordered, rhs)
    A1 = GridFn(grid, sol[:n], "even")
    A2 = GridFn(grid, sol[n:2 * n], "even")
    return A1, A2


# ---------------------------------------------------------------------------
# uniqueness probe: full sub-threshold census of the original block problem

def _interleaved_block(grid: Grid, omega: float) -> sp.csc_matrix:
    """Block operator C (V1, V2) = (L- V2, L+ V1) in interleaved ordering,
    which keeps the sparse LU banded."""
    n = grid.n_points
    Q = q_values(omega, grid.nodes)
    Q2, Q4 = Q * Q, Q ** 4
    D2 = _second_derivative_matrix(grid).tocoo()
    rows, cols, vals = [], [], []
    # even slots (2j): row of L- acting on V2 (odd slots)
    # odd slots (2j+1): row of L+ acting on V1 (even slots)
    for r, c0, v in zip(D2.row, D2.col, D2.data):
        rows.append(2 * r)
        cols.append(2 * c0 + 1)
        vals.append(-v)
        rows.append(2 * r + 1)
        cols.append(2 * c0)
        vals.append(-v)
    j = np.arange(n)
    rows.extend(2 * j)
    cols.extend(2 * j + 1)
    vals.extend(1.0 - Q2 - omega * Q4)
    rows.extend(2 * j + 1)
    cols.extend(2 * j)
    vals.extend(1.0 - 3.0 * Q2 - 5.0 * omega * Q4)
    return sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n)).tocsc()


def uniqueness_probe(omega: float, half_width: float = 250.0,
                     n_points: int = 10000, n_eigs: int = 40,
                     localization_cut: float = 0.9) -> dict:
    """Census of the discrete spectrum of the coupled problem below the
    continuum threshold 1, with each localized pair classified.

    Shift-inverts at 0.5: every eigenvalue in [0, 1] is closer to the shift
    than anything outside [-0.0x, 1.0x], so the k nearest Ritz values cover
    the whole sub-threshold census.
    """
    grid = Grid(half_width, n_points + n_points % 2)
    n = grid.n_points
    C = _interleaved_block(grid, omega)
    try:
        vals, vecs = spla.eigs(C, k=n_eigs, sigma=0.5, which="LM", tol=0)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError("uniqueness probe eigensolve failed") from exc

    y = grid.nodes
    mode = build_internal_mode(omega, grid=grid, validate=False)
    Qp = qprime_values(omega, y)
    Qv = q_values(omega, y)
    lamQ = lambda_omega_Q(omega, grid).values
    # generalized zero subspace: (Q', 0), (0, Q), (0, yQ), (Lambda_omega Q, 0)
    zero_basis = []
    for first, second in ((Qp, None), (None, Qv), (None, y * Qv), (lamQ, None)):
        vec = np.zeros(2 * n)
        if first is not None:
            vec[0::2] = first
        if second is not None:
            vec[1::2] = second
        zero_basis.append(vec / np.linalg.norm(vec))
    Zb = np.linalg.qr(np.array(zero_basis).T)[0]

    vmode = np.zeros(2 * n)
    vmode[0::2] = mode.V1.values
    vmode[1::2] = mode.V2.values
    vmode /= np.linalg.norm(vmode)

    inside = np.abs(y) <= half_width / 2
    mask = np.zeros(2 * n, dtype=bool)
    mask[0::2] = inside
    mask[1::2] = inside

    entries = []
    for k in range(len(vals)):
        lam_k = vals[k]
        if abs(lam_k.imag) > 1e-6 or not (-0.2 <= lam_k.real <= 0.9999):
            continue
        vec = vecs[:, k].real
        nv = np.linalg.norm(vec)
        if nv == 0:
            continue
        vec = vec / nv
        score = float(np.sum(vec[mask] ** 2))
        corr_mode = float(abs(np.dot(vec, vmode)))
        corr_zero = float(np.linalg.norm(Zb.T @ vec))
        if score < localization_cut:
            label = "continuum_artifact"
        elif corr_zero >= 0.99:
            label = "zero_mode"
        elif corr_mode >= 0.99 and lam_k.real > 0:
            label = "internal_mode"
        else:
            label = "unclassified"
        entries.append(dict(eigenvalue=float(lam_k.real), score=score,
                            corr_mode=corr_mode, corr_zero=corr_zero,
                            label=label))

    entries.sort(key=lambda e: e["eigenvalue"])
    # how completely the zero-subspace directions (Q', 0) and (0, Q) are
    # spanned by the found zero-class eigenvectors
    zero_vecs = [vecs[:, k].real / np.linalg.norm(vecs[:, k].real)
                 for k in range(len(vals))
                 if abs(vals[k].imag) < 1e-6 and abs(vals[k].real) < 0.1]
    span_cover = {}
    for name, idx in (("Qprime", 0), ("Q", 1)):
        target = zero_basis[idx]
        if zero_vecs:
            B = np.linalg.qr(np.array(zero_vecs).T)[0]
            span_cover[name] = float(np.linalg.norm(B.T @ target))
        else:
            span_cover[name] = 0.0

    return dict(
        omega=omega, half_width=half_width,
        internal_modes=[e for e in entries if e["label"] == "internal_mode"],
        zero_modes=[e for e in entries if e["label"] == "zero_mode"],
        unclassified=[e for e in entries if e["label"] == "unclassified"],
        continuum=[e for e in entries if e["label"] == "continuum_artifact"],
        zero_span_cover=span_cover,
        mode_lambda=mode.lam)
