"""Closed-form soliton family of the cubic-quintic focusing NLS.

The rescaled ground state at frequency omega is

    Q_omega(y) = sqrt(4 / (1 + a_omega cosh 2y)),   a_omega = sqrt(1 + 16 omega / 3),

solving Q'' - Q + Q^3 + omega Q^5 = 0 together with the first integral
(Q')^2 - Q^2 + Q^4/2 + (omega/3) Q^6 = 0.  omega = 0 gives the cubic-NLS
profile sqrt(2) sech y, the anchor of every small-omega expansion used here.

Everything is evaluated through u = exp(-2|y|) so that no cosh overflows on
the very wide boxes (|y| up to ~5e3) the spectral modules need.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import Grid, GridFn


def a_coefficient(omega: float) -> float:
    return float(np.sqrt(1.0 + 16.0 * omega / 3.0))


def q_values(omega: float, y: np.ndarray) -> np.ndarray:
    """Q_omega sampled at y, overflow-safe for arbitrarily large |y|."""
    a = a_coefficient(omega)
    u = np.exp(-2.0 * np.abs(y))
    # 1 + a cosh 2y = (2u + a + a u^2) / (2u)
    return 2.0 * np.sqrt(2.0 * u) / np.sqrt(a + 2.0 * u + a * u * u)


def xi_values(omega: float, y: np.ndarray) -> np.ndarray:
    """Logarithmic slope Q'/Q; odd, |xi| < 1, tends to -sign(y)."""
    a = a_coefficient(omega)
    u = np.exp(-2.0 * np.abs(y))
    return -np.sign(y) * a * (1.0 - u * u) / (a + 2.0 * u + a * u * u)


def qprime_values(omega: float, y: np.ndarray) -> np.ndarray:
    return q_values(omega, y) * xi_values(omega, y)


def dq_domega_values(omega: float, y: np.ndarray) -> np.ndarray:
    """Analytic d(Q_omega)/d(omega); avoids divided differences entirely.

    From the closed form: dQ/domega = -(8/(3a)) cosh(2y) (Q/2)^3, rearranged
    through u = exp(-2|y|).
    """
    a = a_coefficient(omega)
    u = np.exp(-2.0 * np.abs(y))
    return -(8.0 / (3.0 * a)) * np.sqrt(2.0 * u) * (1.0 + u * u) \
        / (a + 2.0 * u + a * u * u) ** 1.5


@dataclass(frozen=True)
class SolitonProfile:
    """Ground state Q_omega on a grid, with its exact derivative."""

    omega: float
    grid: Grid

    def __post_init__(self) -> None:
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")

    @property
    def a_omega(self) -> float:
        return a_coefficient(self.omega)

    @cached_property
    def Q(self) -> GridFn:
        return GridFn(self.grid, q_values(self.omega, self.grid.nodes), "even")

    @cached_property
    def Q_prime(self) -> GridFn:
        return GridFn(self.grid, qprime_values(self.omega, self.grid.nodes), "odd")

    @cached_property
    def xi(self) -> GridFn:
        return GridFn(self.grid, xi_values(self.omega, self.grid.nodes), "odd")

    @cached_property
    def dQ_domega(self) -> GridFn:
        return GridFn(self.grid, dq_domega_values(self.omega, self.grid.nodes), "even")

    def phi(self, physical_grid: Grid) -> GridFn:
        """Laboratory-frame profile phi_omega(x) = sqrt(omega) Q_omega(sqrt(omega) x)."""
        if self.omega == 0:
            raise ValueError("phi is only defined for omega > 0")
        root = np.sqrt(self.omega)
        return GridFn(physical_grid,
                      root * q_values(self.omega, root * physical_grid.nodes),
                      "even")

    def ode_residual(self) -> GridFn:
        """Q'' - Q + Q^3 + omega Q^5 by finite differences (should be ~h^4)."""
        from .grid import diff
        Q = self.Q
        res = diff(Q, 2).values - Q.values + Q.values**3 + self.omega * Q.values**5
        return GridFn(self.grid, res, "even")

    def first_integral_residual(self) -> GridFn:
        """(Q')^2 - Q^2 + Q^4/2 + (omega/3) Q^6 with the analytic Q'."""
        Q = self.Q.values
        Qp = self.Q_prime.values
        res = Qp**2 - Q**2 + 0.5 * Q**4 + (self.omega / 3.0) * Q**6
        return GridFn(self.grid, res, "even")


def make_profile(omega: float, grid: Grid) -> SolitonProfile:
    """Construct the soliton profile; omega = 0 gives sqrt(2) sech y."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    return SolitonProfile(omega, grid)


def E_correction(grid: Grid) -> GridFn:
    """First omega-derivative of the family at omega = 0.

    E = -(4/3) Q0 + (1/3) Q0^3; it satisfies (L+ at omega 0) E = Q0^5,
    which the tests verify discretely.
    """
    Q0 = q_values(0.0, grid.nodes)
    return GridFn(grid, -(4.0 / 3.0) * Q0 + Q0**3 / 3.0, "even")


def xi_Q(profile: SolitonProfile) -> GridFn:
    """Logarithmic derivative Q'/Q of the profile (odd, values in (-1, 1))."""
    return profile.xi


def profile_calculus(omega: float, y: np.ndarray) -> dict:
    """Analytic profile-derived coefficient fields used by operator towers.

    Returns Q, Q^2, Q^4, xi = Q'/Q with two derivatives, (Q^4)' and (Q^4)'',
    and Q''/Q with two derivatives.  All overflow-safe.  The derivative
    identities follow from the profile ODE: Q''/Q = 1 - Q^2 - omega Q^4 and
    xi' = Q''/Q - xi^2.
    """
    Q = q_values(omega, y)
    Q2 = Q * Q
    Q4 = Q2 * Q2
    xi = xi_values(omega, y)
    QQ = 1.0 - Q2 - omega * Q4          # Q''/Q
    xip = QQ - xi * xi
    dQ2 = 2.0 * Q2 * xi
    dQ4 = 4.0 * Q4 * xi
    d2Q4 = 4.0 * (dQ4 * xi + Q4 * xip)
    d2Q2 = 2.0 * (dQ2 * xi + Q2 * xip)
    xipp = -dQ2 - omega * dQ4 - 2.0 * xi * xip
    QQp = -dQ2 - omega * dQ4
    QQpp = -d2Q2 - omega * d2Q4
    return dict(Q=Q, Q2=Q2, Q4=Q4, xi=xi, xip=xip, xipp=xipp,
                dQ4=dQ4, d2Q4=d2Q4, QQ=QQ, QQp=QQp, QQpp=QQpp)


def mass_of_phi(omega: float, grid: Grid) -> float:
    """L^2 mass of the laboratory profile, sqrt(omega) * integral(Q_omega^2)."""
    from .grid import integrate
    q2 = GridFn(grid, q_values(omega, grid.nodes) ** 2, "even")
    return float(np.sqrt(omega) * integrate(q2))


def dmass_domega(omega: float, grid: Grid) -> float:
    """Analytic d/domega of ||phi_omega||^2 (enters the modulation Jacobian)."""
    from .grid import integrate
    y = grid.nodes
    q = q_values(omega, y)
    dq = dq_domega_values(omega, y)
    integrand = GridFn(grid, q * q / (2.0 * np.sqrt(omega)) + 2.0 * np.sqrt(omega) * q * dq)
    return float(integrate(integrand))
