"""Golden-rule coupling constant: exact certification and numeric evaluation.

The leading coefficient of the coupling Gamma(omega) = Gamma0 omega + O(omega^2)
reduces, through integration-by-parts recursions on the moment families

    p_k = int Q^k cos y          q_k = int Q^k ln(Q/sqrt 8) cos y
    r_k = int T2 Q^k cos y       s_k = int T2 Q^(k-1) Q' sin y

(Q = sqrt(2) sech y, T2 the exp(-sqrt2 |.|) convolution of -Q^4/6), to an
exact rational multiple of p_1.  The certification below reproduces that
collapse in exact arithmetic: a 17-term combination whose q/r/s content must
cancel identically, leaving Gamma0 = (32/3) p_1 with p_1 = pi sqrt2 / cosh(pi/2).

The numeric side evaluates Gamma(omega) directly from the internal mode and
the bounded pair (g1, g2) and cross-checks the slope against Gamma0.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict

import numpy as np

from .grid import GridFn, inner, integrate
from .profiles import q_values

PI_SQRT2_OVER_COSH = float(np.pi * np.sqrt(2.0) / np.cosh(np.pi / 2.0))


class CertificationError(RuntimeError):
    """The exact golden-rule cancellation failed."""


@dataclass(frozen=True)
class RatVec4:
    """Exact rational vector over the basis (p1, q1, r1, s1)."""

    p: Fraction = Fraction(0)
    q: Fraction = Fraction(0)
    r: Fraction = Fraction(0)
    s: Fraction = Fraction(0)

    def __add__(self, other: "RatVec4") -> "RatVec4":
        return RatVec4(self.p + other.p, self.q + other.q,
                       self.r + other.r, self.s + other.s)

    def __sub__(self, other: "RatVec4") -> "RatVec4":
        return RatVec4(self.p - other.p, self.q - other.q,
                       self.r - other.r, self.s - other.s)

    def scale(self, c) -> "RatVec4":
        c = Fraction(c)
        return RatVec4(c * self.p, c * self.q, c * self.r, c * self.s)

    def __rmul__(self, c) -> "RatVec4":
        return self.scale(c)

    def as_tuple(self):
        return (self.p, self.q, self.r, self.s)

    def numeric(self, p1: float, q1: float, r1: float, s1: float) -> float:
        return float(self.p) * p1 + float(self.q) * q1 \
            + float(self.r) * r1 + float(self.s) * s1


BASE_STATE: Dict[str, RatVec4] = {
    "p": RatVec4(p=Fraction(1)),
    "q": RatVec4(q=Fraction(1)),
    "r": RatVec4(r=Fraction(1)),
    "s": RatVec4(s=Fraction(1)),
}


def _p_next(k: int, p_k: RatVec4) -> RatVec4:
    return Fraction(2 * (k * k + 1), k * (k + 1)) * p_k


def recursion_step(k: int, state: Dict[str, RatVec4]) -> Dict[str, RatVec4]:
    """Advance (p_k, q_k, r_k, s_k) to k+2 for odd k >= 1.

    The r and s rules consume p_{k+4}, produced by two p-steps first.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError("k must be an odd positive integer")
    p_k, q_k, r_k, s_k = state["p"], state["q"], state["r"], state["s"]
    p_k2 = _p_next(k, p_k)
    p_k4 = _p_next(k + 2, p_k2)
    q_k2 = Fraction(2 * (k * k + 1), k * (k + 1)) * q_k \
        + Fraction(2 * (k * k - 2 * k - 1), k * k * (k + 1) * (k + 1)) * p_k
    r_k2 = Fraction(2, k * (k + 1)) * (
        (k * k - 3) * r_k - (2 * k) * s_k + Fraction(-2, 3) * p_k4)
    s_k2 = Fraction(2, k * (k + 1) * (k + 2)) * (
        6 * r_k + (k * (k * k + 1)) * s_k
        + Fraction(2 * (3 * k + 8), 3 * (k + 4)) * p_k4)
    return {"p": p_k2, "q": q_k2, "r": r_k2, "s": s_k2}


def moment_table(k_max: int = 9) -> Dict[int, Dict[str, RatVec4]]:
    """Exact (p_k, q_k, r_k, s_k) for odd k up to k_max, over the k=1 basis."""
    table = {1: dict(BASE_STATE)}
    k = 1
    while k + 2 <= k_max:
        table[k + 2] = recursion_step(k, table[k])
        k += 2
    return table


# The 17-term combination defining Gamma0 over the moment families.
# Checksum: sum of all |numerator| + |denominator| of the coefficients
# equals 17874; the mutation test in the suite guards single-entry slips.
GAMMA0_COMBINATION = (
    ("p", 1, Fraction(-80, 9)),
    ("p", 3, Fraction(372, 9)),
    ("p", 5, Fraction(2446, 25)),
    ("p", 7, Fraction(-9613, 63)),
    ("p", 9, Fraction(1312, 27)),
    ("q", 1, Fraction(-128, 9)),
    ("q", 3, Fraction(128, 3)),
    ("q", 5, Fraction(-2624, 45)),
    ("q", 7, Fraction(64, 3)),
    ("r", 1, Fraction(-32)),
    ("r", 3, Fraction(-124)),
    ("r", 5, Fraction(388)),
    ("r", 7, Fraction(-168)),
    ("s", 1, Fraction(16)),
    ("s", 3, Fraction(108)),
    ("s", 5, Fraction(156)),
    ("s", 7, Fraction(-168)),
)

COMBINATION_CHECKSUM = 17874


def evaluate_combination(combination=GAMMA0_COMBINATION) -> RatVec4:
    table = moment_table(9)
    total = RatVec4()
    for family, k, coeff in combination:
        total = total + coeff * table[k][family]
    return total


def gamma0_exact() -> RatVec4:
    """Certify the exact collapse to (32/3, 0, 0, 0); hard pass/fail."""
    checksum = sum(abs(c.numerator) + abs(c.denominator)
                   for _, _, c in GAMMA0_COMBINATION)
    if checksum != COMBINATION_CHECKSUM:
        raise CertificationError(
            f"coefficient table checksum {checksum} != {COMBINATION_CHECKSUM}")
    total = evaluate_combination()
    expected = RatVec4(p=Fraction(32, 3))
    if total != expected:
        raise CertificationError(
            f"combination evaluates to {total.as_tuple()}, "
            f"expected (32/3, 0, 0, 0)")
    return total


def gamma0_numeric() -> float:
    """(32/3) pi sqrt2 / cosh(pi/2), from the certified vector and the
    residue value of p_1."""
    vec = gamma0_exact()
    return vec.numeric(PI_SQRT2_OVER_COSH, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# numeric moments (quadrature side of the exact/numeric loop closure)

def t2_values(y: np.ndarray, aux_points: int = 4096,
              aux_width: float = 40.0) -> np.ndarray:
    """T2(y) = -(sqrt2/6) int e^{-sqrt2 |y-z|} Q0^4(z) dz by half-line
    cumulant quadrature (even in y), with its derivative available via
    t2_prime_values."""
    return _t2_pair(y, aux_points, aux_width)[0]


def t2_prime_values(y: np.ndarray, aux_points: int = 4096,
                    aux_width: float = 40.0) -> np.ndarray:
    return _t2_pair(y, aux_points, aux_width)[1]


def _t2_pair(y: np.ndarray, aux_points: int, aux_width: float):
    from scipy.interpolate import CubicSpline
    sig = np.sqrt(2.0)
    xg = np.linspace(0.0, aux_width, aux_points)
    F = q_values(0.0, xg) ** 4
    P = CubicSpline(xg, np.exp(sig * xg) * F).antiderivative()(xg)
    Rf = CubicSpline(xg, np.exp(-sig * xg) * F).antiderivative()(xg)
    ay = np.abs(y)
    ayc = np.minimum(ay, aux_width)
    Pi = CubicSpline(xg, P)(ayc)
    Ri = CubicSpline(xg, Rf)(ayc)
    Rt = Rf[-1]
    damp = np.exp(-sig * np.maximum(ay - aux_width, 0.0))
    em = np.exp(-sig * ayc)
    J = (em * Pi + np.exp(sig * ayc) * (Rt - Ri) + em * Rt) * damp
    Jd = sig * (-em * Pi + np.exp(sig * ayc) * (Rt - Ri) - em * Rt) * damp * np.sign(y)
    return -(sig / 6.0) * J, -(sig / 6.0) * Jd


def numeric_moments(grid, k_max: int = 9) -> dict:
    """p_k, q_k, r_k, s_k for odd k <= k_max by direct quadrature at omega = 0."""
    y = grid.nodes
    Q = q_values(0.0, y)
    Qp = Q * (-np.tanh(y))
    lnQ = np.log(Q / np.sqrt(8.0))
    T2 = t2_values(y)
    cy, sy = np.cos(y), np.sin(y)
    out = {"p": {}, "q": {}, "r": {}, "s": {}}
    for k in range(1, k_max + 1, 2):
        Qk = Q ** k
        out["p"][k] = float(integrate(GridFn(grid, Qk * cy)))
        out["q"][k] = float(integrate(GridFn(grid, Qk * lnQ * cy)))
        out["r"][k] = float(integrate(GridFn(grid, T2 * Qk * cy)))
        out["s"][k] = float(integrate(GridFn(grid, T2 * Q ** (k - 1) * Qp * sy)))
    return out


# ---------------------------------------------------------------------------
# numeric Gamma(omega)

def gamma_numeric(mode, pair) -> float:
    """Coupling integral Gamma(omega) = int(G1^T g1 + G2^perp g2).

    The projections subtract the V-components; by the orthogonality of
    (g1, g2) the projected and raw forms agree, which the acceptance suite
    checks as an internal consistency identity.
    """
    if pair.mode is not mode:
        if pair.mode.grid != mode.grid or pair.mode.omega != mode.omega:
            raise ValueError("mode and golden-rule pair live on different grids")
    grid = mode.grid
    om = mode.omega
    Q = q_values(om, grid.nodes)
    Q3 = Q ** 3
    V1, V2 = mode.V1.values, mode.V2.values
    G = V1 * V1 * (3.0 * Q + 10.0 * om * Q3)
    H = V2 * V2 * (Q + 2.0 * om * Q3)
    G1 = G - H
    G2 = 2.0 * V1 * V2 * (Q + 2.0 * om * Q3)
    v12 = inner(mode.V1, mode.V2)
    G1_top = G1 - integrate(GridFn(grid, G1 * V1)) / v12 * V2
    G2_perp = G2 - integrate(GridFn(grid, G2 * V2)) / v12 * V1
    return float(integrate(GridFn(
        grid, G1_top * pair.g1.values + G2_perp * pair.g2.values)))


def gamma_numeric_unprojected(mode, pair) -> float:
    grid = mode.grid
    om = mode.omega
    Q = q_values(om, grid.nodes)
    Q3 = Q ** 3
    V1, V2 = mode.V1.values, mode.V2.values
    G1 = V1 * V1 * (3.0 * Q + 10.0 * om * Q3) - V2 * V2 * (Q + 2.0 * om * Q3)
    G2 = 2.0 * V1 * V2 * (Q + 2.0 * om * Q3)
    return float(integrate(GridFn(
        grid, G1 * pair.g1.values + G2 * pair.g2.values)))


def richardson_slope(values: dict[float, float]) -> float:
    """Second-order Richardson extrapolation of f(omega) -> f(0) over three
    omegas in a 4:2:1 ratio (keys sorted descending)."""
    oms = sorted(values, reverse=True)
    if len(oms) != 3 or not np.isclose(oms[0] / oms[1], 2.0) \
            or not np.isclose(oms[1] / oms[2], 2.0):
        raise ValueError("need omegas in ratio 4:2:1")
    a1 = 2.0 * values[oms[1]] - values[oms[0]]
    a2 = 2.0 * values[oms[2]] - values[oms[1]]
    return float((4.0 * a2 - a1) / 3.0)


@dataclass
class GammaReport:
    """Certified exact vector plus the numeric cross-checks."""

    gamma0_vector: RatVec4
    p1_closed_form: float
    gamma0_numeric: float
    gamma_numeric: dict[float, float]

    def to_json_dict(self) -> dict:
        return {
            "schema": "cqnls.golden_rule/1",
            "gamma0_vector": [[c.numerator, c.denominator]
                              for c in self.gamma0_vector.as_tuple()],
            "p1": self.p1_closed_form,
            "gamma0_numeric": self.gamma0_numeric,
            "gamma_per_omega": {str(k): v for k, v in self.gamma_numeric.items()},
        }
