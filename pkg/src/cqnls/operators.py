"""Linearization operators as grid actions, the two factorisations, and the
transformed fourth-order operator with its virial potentials.

Second-order pair around the soliton:

    L+ = -d2 + 1 - 3 Q^2 - 5 omega Q^4        L- = -d2 + 1 - Q^2 - omega Q^4
    M+ = -d2 + 1 + (omega/3) Q^4              M- = -d2 + 1 - omega Q^4

with S = d/dy - Q'/Q (so L- = S* S, M+ = S S*) and the conjugation
S^2 L+ L- = M+ M- S^2.  A second conjugation U M+ M- = K U with
U = d/dy - W2'/W2 produces K = d4 - 2 d2 + K2 d2 + K1 d + K0 + 1 whose
potential is repulsive: integral(Y0) = (32/9) omega + O(omega^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, GridFn, diff, inner, integrate, norm
from .profiles import SolitonProfile, profile_calculus

if TYPE_CHECKING:
    from .spectral import InternalMode


class MissingModeError(RuntimeError):
    """An operator needing an internal mode was requested without one."""


_OP_NAMES = ("L+", "L-", "M+", "M-", "S", "S*", "U", "Lambda", "Lambda_omega", "K")


@dataclass
class OperatorBundle:
    """All linear operators attached to one soliton profile.

    `mode` is only needed for U and K.  Applications use the package
    finite-difference stencils, so residuals of the exact continuum
    identities measure pure discretisation error.
    """

    profile: SolitonProfile
    mode: "InternalMode | None" = None

    @property
    def grid(self) -> Grid:
        return self.profile.grid

    @cached_property
    def _pc(self) -> dict:
        return profile_calculus(self.profile.omega, self.grid.nodes)

    @cached_property
    def _xi_w(self) -> np.ndarray:
        if self.mode is None:
            raise MissingModeError("U requires an internal mode")
        return _protected_xi_w(self.mode)

    def apply(self, name: str, f: GridFn) -> GridFn:
        if name not in _OP_NAMES:
            raise ValueError(f"unknown operator {name!r}; choose from {_OP_NAMES}")
        om = self.profile.omega
        pc = self._pc
        v = f.values
        if name == "L+":
            out = -diff(f, 2).values + v - 3 * pc["Q2"] * v - 5 * om * pc["Q4"] * v
            return GridFn(self.grid, out, f.parity)
        if name == "L-":
            out = -diff(f, 2).values + v - pc["Q2"] * v - om * pc["Q4"] * v
            return GridFn(self.grid, out, f.parity)
        if name == "M+":
            out = -diff(f, 2).values + v + (om / 3.0) * pc["Q4"] * v
            return GridFn(self.grid, out, f.parity)
        if name == "M-":
            out = -diff(f, 2).values + v - om * pc["Q4"] * v
            return GridFn(self.grid, out, f.parity)
        if name in ("S", "S*"):
            sgn = 1.0 if name == "S" else -1.0
            out = sgn * diff(f, 1).values - pc["xi"] * v
            parity = None
            if f.parity is not None:
                parity = "odd" if f.parity == "even" else "even"
            return GridFn(self.grid, out, parity)
        if name == "U":
            out = diff(f, 1).values - self._xi_w * v
            parity = None
            if f.parity is not None:
                parity = "odd" if f.parity == "even" else "even"
            return GridFn(self.grid, out, parity)
        if name == "Lambda":
            out = 0.5 * v + 0.5 * self.grid.nodes * diff(f, 1).values
            return GridFn(self.grid, out, f.parity)
        if name == "Lambda_omega":
            # Lambda_omega is only realised on the profile itself, through
            # the analytic d(Q_omega)/d(omega)
            if not np.allclose(v, self.profile.Q.values, atol=1e-12):
                raise ValueError("Lambda_omega is only defined on Q_omega")
            return self.lambda_omega_Q()
        if name == "K":
            K = self.k_operator()
            return apply_K(K, f)
        raise AssertionError("unreachable")

    def lambda_omega_Q(self) -> GridFn:
        out = 0.5 * self.profile.Q.values \
            + 0.5 * self.grid.nodes * self.profile.Q_prime.values \
            + self.profile.omega * self.profile.dQ_domega.values
        return GridFn(self.grid, out, "even")

    def k_operator(self) -> "KOperator":
        if self.mode is None:
            raise MissingModeError("K requires an internal mode")
        return build_K(self.mode)


def _protected_xi_w(mode) -> np.ndarray:
    """W2'/W2 with the analytic far-field slope -alpha sign(y) substituted
    beyond the radius where W2 underflows relative to W2(0)."""
    w2 = mode.w_towers[(2, 0)]
    w2p = mode.w_towers[(2, 1)]
    y = mode.grid.nodes
    tiny = w2 < 1e-12 * w2[len(w2) // 2]
    xi_w = np.empty_like(w2)
    np.divide(w2p, w2, out=xi_w, where=~tiny)
    xi_w[tiny] = -mode.alpha * np.sign(y[tiny])
    return xi_w


# ---------------------------------------------------------------------------
# first factorisation checks

def check_conjugation_first(omega: float, grid: Grid,
                            test_fns: list[GridFn]) -> dict:
    """Relative residuals of S^2 L+ L- = M+ M- S^2 and of the building
    blocks S S* = M+ and S* S = L-, in the interior norm."""
    from .profiles import make_profile
    bundle = OperatorBundle(make_profile(omega, grid))
    interior = grid.interior(0.1)

    def interior_norm(f: GridFn) -> float:
        vals = np.where(interior, f.values, 0.0)
        return norm(GridFn(grid, vals))

    out = []
    for f in test_fns:
        lhs = bundle.apply("S", bundle.apply(
            "S", bundle.apply("L+", bundle.apply("L-", f))))
        rhs = bundle.apply("M+", bundle.apply(
            "M-", bundle.apply("S", bundle.apply("S", f))))
        nf = norm(f)
        res_main = interior_norm(lhs - rhs) / nf
        res_ssstar = interior_norm(
            bundle.apply("S", bundle.apply("S*", f)) - bundle.apply("M+", f)) / nf
        res_sstars = interior_norm(
            bundle.apply("S*", bundle.apply("S", f)) - bundle.apply("L-", f)) / nf
        out.append(dict(main=res_main, ss_star=res_ssstar, s_star_s=res_sstars))
    return dict(omega=omega, residuals=out)


# ---------------------------------------------------------------------------
# the fourth-order transformed operator

@dataclass
class KOperator:
    """Coefficients of K = d4 - 2 d2 + K2 d2 + K1 d + K0 + 1 plus the virial
    potentials Y1 = -2K2 - yK2' + 2yK1, Y0 = (K2'' - K1' - 2yK0')/2."""

    mode: "InternalMode"
    K2: GridFn
    K1: GridFn
    K0: GridFn
    Y1: GridFn
    Y0: GridFn
    xi_W: GridFn

    @property
    def grid(self) -> Grid:
        return self.mode.grid


def build_K(mode, tail_floor: float = 1e-13) -> KOperator:
    """Assemble K2, K1, K0 from the internal-mode derivative towers.

    The coefficients decay like omega e^{-(kappa-alpha)|y|}; beyond the
    radius where that envelope falls under `tail_floor` they are set to
    exactly zero, which protects the y-weighted virial potentials from
    amplified round-off in the far field.
    """
    if np.any(mode.w_towers[(2, 0)] <= 0):
        raise ValueError("W2 must be positive everywhere to divide by it")
    om, lam = mode.omega, mode.lam
    grid = mode.grid
    y = grid.nodes
    pc = profile_calculus(om, y)
    Q4, dQ4 = pc["Q4"], pc["dQ4"]

    W2 = mode.w_towers[(2, 0)]
    r = {(j, k): mode.w_towers[(j, k)] / W2
         for j in (1, 2) for k in range(5)}
    xw = r[(2, 1)]

    K2 = 1.0 - lam * r[(1, 0)] + 3.0 * r[(2, 2)] - 4.0 * xw**2 - om / 3.0 * Q4
    K1 = (-3.0 * lam * r[(1, 1)] + 3.0 * lam * r[(1, 0)] * xw + 3.0 * r[(2, 3)]
          - 11.0 * xw * r[(2, 2)] + 8.0 * xw**3 - om / 3.0 * dQ4)
    K0 = (-2.0 * lam * r[(1, 2)] + 5.0 * lam * r[(1, 1)] * xw + 2.0 * xw**2
          - 3.0 * lam * r[(1, 0)] * xw**2 + lam * r[(1, 0)] * r[(2, 2)]
          - r[(2, 2)] + r[(2, 4)] - 5.0 * xw * r[(2, 3)] - 3.0 * r[(2, 2)]**2
          + 15.0 * r[(2, 2)] * xw**2 - 8.0 * xw**4
          - om / 3.0 * dQ4 * xw - om / 3.0 * Q4 * r[(2, 2)]
          + 2.0 * om / 3.0 * Q4 * xw**2 + lam**2 - 1.0)

    rate = mode.kappa - mode.alpha
    cut = -np.log(tail_floor / max(om, 1e-10)) / rate
    far = np.abs(y) > cut
    for arr in (K2, K1, K0):
        arr[far] = 0.0

    K2f = GridFn(grid, K2, "even")
    K1f = GridFn(grid, K1, "odd")
    K0f = GridFn(grid, K0, "even")
    K2p = diff(K2f, 1).values
    K2pp = diff(K2f, 2).values
    K1p = diff(K1f, 1).values
    K0p = diff(K0f, 1).values
    Y1 = -2.0 * K2 - y * K2p + 2.0 * y * K1
    Y0 = 0.5 * (K2pp - K1p - 2.0 * y * K0p)
    Y1[far] = 0.0
    Y0[far] = 0.0

    return KOperator(mode=mode, K2=K2f, K1=K1f, K0=K0f,
                     Y1=GridFn(grid, Y1, "even"), Y0=GridFn(grid, Y0, "even"),
                     xi_W=GridFn(grid, _protected_xi_w(mode), "odd"))


def apply_K(K: KOperator, f: GridFn) -> GridFn:
    out = (diff(f, 4).values - 2.0 * diff(f, 2).values
           + K.K2.values * diff(f, 2).values + K.K1.values * diff(f, 1).values
           + K.K0.values * f.values + f.values)
    return GridFn(K.grid, out, f.parity)


def check_conjugation_second(K: KOperator, test_fns: list[GridFn]) -> dict:
    """Relative interior residuals of U M+ M- f = K U f."""
    from .profiles import make_profile
    mode = K.mode
    bundle = OperatorBundle(make_profile(mode.omega, mode.grid), mode)
    interior = mode.grid.interior(0.1)
    out = []
    for f in test_fns:
        lhs = bundle.apply("U", bundle.apply("M+", bundle.apply("M-", f)))
        rhs = apply_K(K, bundle.apply("U", f))
        num = norm(GridFn(mode.grid, np.where(interior, lhs.values - rhs.values, 0.0)))
        den = norm(GridFn(mode.grid, np.where(interior, lhs.values, 0.0)))
        out.append(num / max(den, 1e-300))
    return dict(omega=mode.omega, residuals=out)


def virial_identity_check(K: KOperator, h: GridFn) -> tuple[float, float]:
    """Both sides of the dilation-pairing identity for K, computed
    independently: integral((2yh' + h) K h) against
    4||h''||^2 + 4||h'||^2 + integral(Y1 h'^2) + integral(Y0 h^2)."""
    grid = K.grid
    y = grid.nodes
    hp = diff(h, 1)
    hpp = diff(h, 2)
    Kh = apply_K(K, h)
    lhs = integrate(GridFn(grid, (2.0 * y * hp.values + h.values) * Kh.values))
    rhs = (4.0 * integrate(GridFn(grid, hpp.values**2))
           + 4.0 * integrate(GridFn(grid, hp.values**2))
           + integrate(GridFn(grid, K.Y1.values * hp.values**2))
           + integrate(GridFn(grid, K.Y0.values * h.values**2)))
    return float(lhs), float(rhs)


def repulsivity_integral(K: KOperator) -> float:
    """Quadrature of the virial potential Y0; positive with
    integral = (32/9) omega + O(omega^2)."""
    return float(integrate(K.Y0))


def simon_inequality_check(Y: GridFn, c: float, h: GridFn,
                           tol: float = 1e-10) -> tuple[bool, float]:
    """Weighted spectral inequality for a small repulsive potential:

        integral(e^{-c|x|} h^2) <= (4/(c I)) integral(Y h^2)
                                   + (64/(c I)^2 * ... ) integral(h'^2),

    with I = integral(Y) > 0 and |Y| <= e^{-|x|} required.  Returns
    (holds, slack = rhs - lhs).
    """
    if not (0.0 < c < 1.0):
        raise ValueError("c must lie in (0, 1)")
    grid = Y.grid
    x = grid.nodes
    if np.any(np.abs(Y.values) > np.exp(-np.abs(x)) + 1e-12):
        raise ValueError("|Y| <= e^{-|x|} violated")
    I = integrate(Y)
    if not I > 0:
        raise ValueError("integral of Y must be positive")
    hp = diff(h, 1)
    lhs = integrate(GridFn(grid, np.exp(-c * np.abs(x)) * np.abs(h.values)**2))
    rhs = (4.0 / (c * I)) * integrate(GridFn(grid, Y.values * np.abs(h.values)**2)) \
        + (64.0 / (c * I)**2) * integrate(GridFn(grid, np.abs(hp.values)**2))
    slack = float(rhs - lhs)
    return slack >= -tol, slack


# ---------------------------------------------------------------------------
# spectral probe of K

def _fourth_derivative_matrix(grid: Grid) -> sp.csr_matrix:
    """4th-order seven-point d4/dy4; low-order one-sided rows at the walls."""
    n = grid.n_points
    h4 = grid.spacing ** 4
    c = np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) / (6.0 * h4)
    diags = [np.full(n - abs(o), c[k]) for k, o in enumerate(range(-3, 4))]
    A = sp.diags(diags, list(range(-3, 4)), format="lil")
    c2 = np.array([1.0, -4.0, 6.0, -4.0, 1.0]) / h4   # 2nd-order five-point
    for j in (0, 1, 2, n - 3, n - 2, n - 1):
        A.rows[j] = []
        A.data[j] = []
        if j < 3:
            start = max(j - 2, 0)
        else:
            start = min(j - 2, n - 5)
        for k in range(5):
            A[j, start + k] = c2[k]
    return A.tocsr()


def k_spectrum_probe(K: KOperator, n_eigs: int = 30,
                     localization_cut: float = 0.9) -> list[dict]:
    """Eigenvalues of the discretised K near [0, 1) with localization scores.

    Score = fraction of eigenvector mass inside |y| <= L/2.  Absence of any
    high-score eigenvalue below the continuum threshold 1 is the discrete
    statement that K has no localized bound state.
    """
    grid = K.grid
    n = grid.n_points
    from .spectral import _second_derivative_matrix
    D2 = _second_derivative_matrix(grid)
    D4 = _fourth_derivative_matrix(grid)
    h = grid.spacing
    e = np.ones(n - 1)
    D1 = sp.diags([-e, e], [-1, 1], format="csr") / (2.0 * h)
    A = (D4 - 2.0 * D2 + sp.diags(K.K2.values) @ D2
         + sp.diags(K.K1.values) @ D1 + sp.diags(K.K0.values + 1.0)).tocsc()
    vals, vecs = spla.eigs(A, k=n_eigs, sigma=0.5, which="LM", tol=0)
    inside = np.abs(grid.nodes) <= grid.half_width / 2
    report = []
    for k in range(len(vals)):
        vec = vecs[:, k].real
        nv = np.linalg.norm(vec)
        score = float(np.sum(vec[inside] ** 2) / nv**2) if nv > 0 else 0.0
        report.append(dict(eigenvalue_real=float(vals[k].real),
                           eigenvalue_imag=float(vals[k].imag),
                           score=score,
                           localized=bool(score > localization_cut)))
    report.sort(key=lambda d: d["eigenvalue_real"])
    return report


def coefficient_envelopes(K: KOperator, fit_radius: float = 20.0) -> dict:
    """Fitted constants C for |K_j| <= C omega e^{-(kappa-alpha)|y|} and
    |Y_j| <= C omega e^{-|y|}, fitted where the envelope exceeds the noise
    floor, then checked at every node with a tiny absolute allowance."""
    mode = K.mode
    y = mode.grid.nodes
    om = mode.omega
    rate = mode.kappa - mode.alpha
    fit = np.abs(y) <= fit_radius
    out = {}
    for name, f, r in (("K2", K.K2, rate), ("K1", K.K1, rate), ("K0", K.K0, rate),
                       ("Y1", K.Y1, 1.0), ("Y0", K.Y0, 1.0)):
        env = om * np.exp(-r * np.abs(y))
        C = float(np.max(np.abs(f.values[fit]) / env[fit]))
        ok = bool(np.all(np.abs(f.values) <= C * env + 1e-9))
        out[name] = dict(constant=C, holds_everywhere=ok)
    return out
