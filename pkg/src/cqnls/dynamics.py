"""Time-domain simulation with modulation and internal-mode tracking.

The PDE  i psi_t + psi_xx + |psi|^2 psi + |psi|^4 psi = 0  is advanced by
Strang splitting on a periodic box: the nonlinear substep is an exact phase
rotation (|psi| is pointwise invariant), the linear substep is the exact
Fourier multiplier e^{-i k^2 dt}.  An optional sponge on the outer band of
the box absorbs radiation, emulating escape to infinity.

Each analysis frame rescales to soliton variables via

    zeta[psi, (gamma, omega)](y) = e^{-i gamma} psi(y / sqrt(omega)) / sqrt(omega),

fits (gamma, omega) so that u = zeta - Q_omega is orthogonal to the phase and
scaling directions, then splits off the internal-mode amplitudes

    b1 = <u1, V2>/<V1, V2>,   b2 = <u2, V1>/<V1, V2>,   v = u - b1 V1 - i b2 V2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import Grid, GridFn, inner, integrate, norm
from .profiles import dmass_domega, q_values
from .spectral import InternalMode, build_internal_mode, lambda_omega_Q


class BlowupError(RuntimeError):
    """NaN/Inf appeared in the state; carries the last valid state."""

    def __init__(self, message: str, last_state: np.ndarray, t: float):
        super().__init__(message)
        self.last_state = last_state
        self.t = t


class FitError(RuntimeError):
    """Modulation fit did not converge."""


@dataclass(frozen=True)
class PhysicalGrid:
    """Periodic uniform grid on [-L, L) for the split-step solver."""

    half_width: float
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if n < 16 or (n & (n - 1)) != 0:
            raise ValueError("n_points must be a power of two >= 16")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    def quad(self, vals: np.ndarray):
        """Rectangle rule; spectrally accurate on the periodic box."""
        return self.spacing * np.sum(vals)

    def evenness_defect(self, psi: np.ndarray) -> float:
        mirrored = np.roll(psi[::-1], 1)   # x_j -> -x_j on the periodic box
        return float(np.max(np.abs(psi - mirrored)))


@dataclass
class SimConfig:
    """Run configuration.  The splitting is stable for any dt (each substep
    is exact); accuracy requires dt * k_max^2 <~ pi, which `stepper` checks."""

    omega0: float = 0.1
    box_half_width: float = 200.0
    n_points: int = 4096
    dt: float = 1e-3
    t_end: float = 100.0
    output_stride: int = 200
    perturbation: str = "none"        # none | internal_mode_kick | gaussian | omega_shift
    epsilon: float = 0.0
    gaussian_width: float = 3.0
    omega_shift: float = 0.0
    sponge_on: bool = True
    sponge_width_fraction: float = 0.15
    sponge_strength: float = 0.5
    analysis_points: int = 2048
    analysis_width_fraction: float = 0.85
    mode_rebuild_rel: float = 1e-3
    seed: int = 0
    snapshot_stride: int = 0          # 0 disables raw snapshots

    @classmethod
    def from_json(cls, path: str) -> "SimConfig":
        with open(path) as fh:
            data = json.load(fh)
        data.pop("schema", None)
        return cls(**data)

    def to_json_dict(self) -> dict:
        out = {"schema": "cqnls.sim_config/1"}
        out.update(asdict(self))
        return out


@dataclass
class ModulationFrame:
    """Per-snapshot decomposition and diagnostics (scalars only; the fields
    u and v stay attached for in-memory consumers)."""

    t: float
    s: float
    gamma: float
    omega: float
    b1: float
    b2: float
    diagnostics: dict
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    fit_ok: bool = True

    @property
    def b_abs(self) -> float:
        return float(np.hypot(self.b1, self.b2))

    def scalar_record(self) -> dict:
        rec = dict(t=self.t, s=self.s, gamma=self.gamma, omega=self.omega,
                   b1=self.b1, b2=self.b2, fit_ok=self.fit_ok)
        rec.update(self.diagnostics)
        return rec


# ---------------------------------------------------------------------------
# stepping

class Stepper:
    """Strang splitting with cached multipliers."""

    def __init__(self, pg: PhysicalGrid, dt: float, sponge_on: bool = False,
                 width_fraction: float = 0.15, strength: float = 0.5,
                 nonlinearity_on: bool = True):
        self.pg = pg
        self.dt = dt
        self.nonlinearity_on = nonlinearity_on
        k = pg.wavenumbers
        self.linear_mult = np.exp(-1j * k * k * dt)
        self.kmax_sq_dt = float(np.max(k * k) * dt)
        if sponge_on:
            x = pg.nodes
            edge = (1.0 - width_fraction) * pg.half_width
            ramp = np.clip((np.abs(x) - edge) / (width_fraction * pg.half_width), 0.0, 1.0)
            smooth = 0.5 * (1.0 - np.cos(np.pi * ramp))
            self.sponge = np.exp(-strength * smooth * dt)
        else:
            self.sponge = None

    def _phase(self, psi: np.ndarray, half_dt: float) -> np.ndarray:
        if not self.nonlinearity_on:
            return psi
        a2 = np.abs(psi) ** 2
        return psi * np.exp(1j * half_dt * (a2 + a2 * a2))

    def step(self, psi: np.ndarray) -> np.ndarray:
        psi = self._phase(psi, 0.5 * self.dt)
        psi = np.fft.ifft(np.fft.fft(psi) * self.linear_mult)
        psi = self._phase(psi, 0.5 * self.dt)
        if self.sponge is not None:
            psi = psi * self.sponge
        return psi


def step(psi: np.ndarray, dt: float, pg: PhysicalGrid,
         sponge_on: bool = False, nonlinearity_on: bool = True) -> np.ndarray:
    """One Strang step (one-off convenience; `run` caches the multipliers)."""
    out = Stepper(pg, dt, sponge_on=sponge_on,
                  nonlinearity_on=nonlinearity_on).step(np.asarray(psi, complex))
    if not np.all(np.isfinite(out)):
        raise BlowupError("non-finite state after step", psi, 0.0)
    return out


def conserved(psi: np.ndarray, pg: PhysicalGrid) -> tuple[float, float, float]:
    """Mass, momentum, energy on the periodic box (spectral derivative)."""
    psi = np.asarray(psi, complex)
    dpsi = np.fft.ifft(1j * pg.wavenumbers * np.fft.fft(psi))
    mass = pg.quad(np.abs(psi) ** 2)
    momentum = pg.quad(np.imag(psi * np.conj(dpsi)))
    a2 = np.abs(psi) ** 2
    energy = pg.quad(0.5 * np.abs(dpsi) ** 2 - 0.25 * a2 ** 2 - a2 ** 3 / 6.0)
    return float(mass), float(momentum), float(energy)


# ---------------------------------------------------------------------------
# modulation fit

def rescale_to_frame(psi: np.ndarray, pg: PhysicalGrid, gamma: float,
                     omega: float, agrid: Grid) -> np.ndarray:
    """zeta[psi, (gamma, omega)] sampled on the analysis grid (cubic spline
    from the physical nodes; the sqrt(omega) rescale misaligns the grids)."""
    root = np.sqrt(omega)
    x_needed = agrid.nodes / root
    if np.max(np.abs(x_needed)) > pg.half_width:
        raise FitError("analysis grid maps outside the physical box")
    re = CubicSpline(pg.nodes, psi.real)(x_needed)
    im = CubicSpline(pg.nodes, psi.imag)(x_needed)
    return (re + 1j * im) * np.exp(-1j * gamma) / root


def _upsilon(psi, pg, gamma, omega, agrid) -> np.ndarray:
    zeta = rescale_to_frame(psi, pg, gamma, omega, agrid)
    u = zeta - q_values(omega, agrid.nodes)
    lamQ = lambda_omega_Q(omega, agrid).values
    Qv = q_values(omega, agrid.nodes)
    w = agrid.weights
    y1 = float(np.sum(w * u.imag * lamQ))          # <u, i Lambda_omega Q>
    y2 = omega * float(np.sum(w * u.real * Qv))    # omega <u, Q>
    return np.array([y1, y2])


def fit_modulation(psi: np.ndarray, pg: PhysicalGrid, guess: tuple[float, float],
                   agrid: Grid, tol: float = 1e-12, max_iter: int = 50
                   ) -> tuple[float, float]:
    """Newton iteration on the two orthogonality conditions.

    The Jacobian starts from its leading term -c0 I2 (c0 = half sqrt(omega)
    d/domega ||phi_omega||^2) and is refreshed by finite differences.
    Returns (gamma mod 2pi, omega).
    """
    gamma, omega = float(guess[0]), float(guess[1])
    c0 = 0.5 * np.sqrt(omega) * dmass_domega(omega, agrid)
    J = -c0 * np.eye(2)
    ups = _upsilon(psi, pg, gamma, omega, agrid)
    for iteration in range(max_iter):
        if np.max(np.abs(ups)) <= tol:
            return float(np.mod(gamma, 2.0 * np.pi)), omega
        if iteration > 0:
            dg = 1e-7 * max(1.0, abs(gamma))
            dw = 1e-7 * omega
            J[:, 0] = (_upsilon(psi, pg, gamma + dg, omega, agrid) - ups) / dg
            J[:, 1] = (_upsilon(psi, pg, gamma, omega + dw, agrid) - ups) / dw
        try:
            delta = np.linalg.solve(J, -ups)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular modulation Jacobian") from exc
        step_cap = 0.5 * omega
        delta = np.clip(delta, -step_cap, step_cap)
        gamma += delta[0]
        omega += delta[1]
        if omega <= 0:
            raise FitError("omega iterated out of (0, inf)")
        ups = _upsilon(psi, pg, gamma, omega, agrid)
    raise FitError(f"no convergence in {max_iter} iterations "
                   f"(|Upsilon| = {np.max(np.abs(ups)):.2e})")


def decompose(psi: np.ndarray, pg: PhysicalGrid, gamma: float, omega: float,
              mode: InternalMode, omega0: float, t: float, s: float
              ) -> ModulationFrame:
    """Build the full modulation frame at fitted parameters (gamma, omega)."""
    agrid = mode.grid
    y = agrid.nodes
    u = rescale_to_frame(psi, pg, gamma, omega, agrid) - q_values(omega, y)
    v12 = inner(mode.V1, mode.V2)
    w = agrid.weights
    b1 = float(np.sum(w * u.real * mode.V2.values)) / v12
    b2 = float(np.sum(w * u.imag * mode.V1.values)) / v12
    v = u - b1 * mode.V1.values - 1j * b2 * mode.V2.values

    nu = 1.0 / np.cosh(y / 10.0)
    rho = 1.0 / np.cosh(omega0 * y / 10.0)
    mass, momentum, energy = conserved(psi, pg)

    def wnorm(weight, vals):
        return float(np.sqrt(np.sum(w * (weight * np.abs(vals)) ** 2)))

    lamQ = lambda_omega_Q(omega, agrid).values
    Qv = q_values(omega, y)
    diag = {
        "mass": mass, "momentum": momentum, "energy": energy,
        "b_abs": float(np.hypot(b1, b2)),
        "rho4_v": wnorm(rho ** 4, v),
        "rho_v": wnorm(rho, v),
        "nu_u": wnorm(nu, u),
        "M_functional": float(np.hypot(b1, b2) ** 4 + wnorm(rho, v) ** 2),
        "orth_u_ilamQ": float(np.sum(w * u.imag * lamQ)),
        "orth_u_Q": float(np.sum(w * u.real * Qv)),
        "orth_v_iV1": float(np.sum(w * v.imag * mode.V1.values)),
        "orth_v_V2": float(np.sum(w * v.real * mode.V2.values)),
        "recon_err": float(np.max(np.abs(
            u - (v + b1 * mode.V1.values + 1j * b2 * mode.V2.values)))),
        "evenness": pg.evenness_defect(psi),
    }
    return ModulationFrame(t=t, s=s, gamma=gamma, omega=omega, b1=b1, b2=b2,
                           diagnostics=diag, u=u, v=v)


# ---------------------------------------------------------------------------
# initial data

def initial_state(cfg: SimConfig, pg: PhysicalGrid,
                  agrid: Grid) -> tuple[np.ndarray, InternalMode]:
    """Initial condition in laboratory variables, plus the analysis-grid
    internal mode at omega0."""
    mode = build_internal_mode(cfg.omega0, grid=agrid, validate=False)
    x = pg.nodes
    root = np.sqrt(cfg.omega0)
    phi = root * q_values(cfg.omega0, root * x)
    if cfg.perturbation == "none":
        psi0 = phi.astype(complex)
    elif cfg.perturbation == "internal_mode_kick":
        v1 = CubicSpline(agrid.nodes, mode.V1.values)(root * x)
        v2 = CubicSpline(agrid.nodes, mode.V2.values)(root * x)
        psi0 = root * (q_values(cfg.omega0, root * x)
                       + cfg.epsilon * v1 + 1j * cfg.epsilon * v2)
    elif cfg.perturbation == "gaussian":
        psi0 = phi + cfg.epsilon * np.exp(-(x / cfg.gaussian_width) ** 2)
        psi0 = psi0.astype(complex)
    elif cfg.perturbation == "omega_shift":
        om = cfg.omega0 + cfg.omega_shift
        psi0 = (np.sqrt(om) * q_values(om, np.sqrt(om) * x)).astype(complex)
    else:
        raise ValueError(f"unknown perturbation {cfg.perturbation!r}")
    return psi0, mode


def h1_distance_to_family(psi: np.ndarray, pg: PhysicalGrid, gamma: float,
                          omega: float) -> float:
    """||e^{-i gamma} psi - phi_omega||_{H^1} at the fitted parameters
    (an upper bound for the infimum over gamma)."""
    x = pg.nodes
    phi = np.sqrt(omega) * q_values(omega, np.sqrt(omega) * x)
    diffv = np.exp(-1j * gamma) * psi - phi
    ddiff = np.fft.ifft(1j * pg.wavenumbers * np.fft.fft(diffv))
    return float(np.sqrt(pg.quad(np.abs(diffv) ** 2 + np.abs(ddiff) ** 2)))


# ---------------------------------------------------------------------------
# the driver

@dataclass
class RunResult:
    config: SimConfig
    frames: list
    summary: dict
    errors: list = field(default_factory=list)

    def series(self, key: str) -> np.ndarray:
        if key in ("t", "s", "gamma", "omega", "b1", "b2"):
            return np.array([getattr(f, key) for f in self.frames])
        return np.array([f.diagnostics[key] for f in self.frames])


def run(cfg: SimConfig, keep_fields: bool = False,
        progress: bool = False) -> RunResult:
    """Full trajectory with modulation frames every `output_stride` steps."""
    pg = PhysicalGrid(cfg.box_half_width, cfg.n_points)
    a_width = cfg.analysis_width_fraction * np.sqrt(cfg.omega0) * cfg.box_half_width
    npts = cfg.analysis_points + cfg.analysis_points % 2
    agrid = Grid(a_width, npts)

    psi, mode = initial_state(cfg, pg, agrid)
    stepper = Stepper(pg, cfg.dt, sponge_on=cfg.sponge_on,
                      width_fraction=cfg.sponge_width_fraction,
                      strength=cfg.sponge_strength)
    if stepper.kmax_sq_dt > np.pi:
        import warnings
        warnings.warn(f"dt*kmax^2 = {stepper.kmax_sq_dt:.2f} > pi; "
                      "splitting accuracy is degraded at the grid scale")

    n_steps = int(round(cfg.t_end / cfg.dt))
    frames: list[ModulationFrame] = []
    errors: list[dict] = []
    snapshots: list[tuple[float, np.ndarray]] = []

    gamma_prev, omega_prev = 0.0, cfg.omega0
    mode_omega = cfg.omega0
    s_acc = 0.0
    t_prev_frame = 0.0
    omega_prev_frame = cfg.omega0

    def analyse(t: float, psi_now: np.ndarray):
        nonlocal gamma_prev, omega_prev, mode, mode_omega
        nonlocal s_acc, t_prev_frame, omega_prev_frame
        # gamma advances like omega * t in lab time
        guess_gamma = gamma_prev + omega_prev * (t - t_prev_frame)
        try:
            gamma, omega = fit_modulation(psi_now, pg, (guess_gamma, omega_prev), agrid)
            ok = True
        except FitError as exc:
            errors.append(dict(t=t, error=str(exc)))
            gamma, omega, ok = gamma_prev, omega_prev, False
        # s accumulates by trapezoid of ds = omega dt between frames
        s_acc += 0.5 * (omega + omega_prev_frame) * (t - t_prev_frame)
        if abs(omega - mode_omega) / mode_omega > cfg.mode_rebuild_rel:
            mode = build_internal_mode(omega, grid=agrid, validate=False)
            mode_omega = omega
        frame = decompose(psi_now, pg, gamma, omega, mode, cfg.omega0, t, s_acc)
        frame.fit_ok = ok
        frame.diagnostics["h1_dist"] = h1_distance_to_family(psi_now, pg, gamma, omega)
        if not keep_fields:
            frame.u = None
            frame.v = None
        frames.append(frame)
        gamma_prev, omega_prev = gamma, omega
        t_prev_frame, omega_prev_frame = t, omega

    analyse(0.0, psi)
    for n in range(1, n_steps + 1):
        psi = stepper.step(psi)
        if not np.all(np.isfinite(psi)):
            raise BlowupError("blow-up detected", psi, n * cfg.dt)
        if n % cfg.output_stride == 0:
            analyse(n * cfg.dt, psi)
            if progress and len(frames) % 50 == 0:
                print(f"  t = {n * cfg.dt:.1f} / {cfg.t_end}", flush=True)
        if cfg.snapshot_stride and n % cfg.snapshot_stride == 0:
            snapshots.append((n * cfg.dt, psi.copy()))

    summary = summarize(frames, cfg)
    result = RunResult(config=cfg, frames=frames, summary=summary, errors=errors)
    result.snapshots = snapshots
    return result


def summarize(frames: list, cfg: SimConfig) -> dict:
    s = np.array([f.s for f in frames])
    b1 = np.array([f.b1 for f in frames])
    b_abs = np.array([f.b_abs for f in frames])
    omega = np.array([f.omega for f in frames])
    out: dict = {
        "n_frames": len(frames),
        "omega_drift_max": float(np.max(np.abs(omega - cfg.omega0))),
        "b_abs_max": float(np.max(b_abs)),
    }
    if len(frames) >= 16 and np.ptp(s) > 0:
        out["b_frequency"] = float(b_oscillation_frequency(s, b1))
        out["int_b4_ds"] = float(np.trapezoid(b_abs ** 4, s))
        rho4v = np.array([f.diagnostics["rho4_v"] for f in frames])
        out["int_rho4v2_ds"] = float(np.trapezoid(rho4v ** 2, s))
        q = len(frames) // 4
        out["b_env_first"] = float(np.max(b_abs[:q])) if q else 0.0
        out["b_env_last"] = float(np.max(b_abs[-q:])) if q else 0.0
        tv = np.abs(np.diff(omega))
        out["omega_tv_first"] = float(np.sum(tv[:q]))
        out["omega_tv_last"] = float(np.sum(tv[-q:]))
    return out


def b_oscillation_frequency(s: np.ndarray, b1: np.ndarray) -> float:
    """Dominant angular frequency of b1(s): uniform-in-s resample, Hann
    window, zero-padded DFT, parabolic peak interpolation."""
    s_uni = np.linspace(s[0], s[-1], len(s))
    b_uni = np.interp(s_uni, s, b1)
    b_uni = b_uni - np.mean(b_uni)
    window = np.hanning(len(b_uni))
    padded = np.zeros(8 * len(b_uni))
    padded[:len(b_uni)] = b_uni * window
    spec = np.abs(np.fft.rfft(padded))
    freqs = 2.0 * np.pi * np.fft.rfftfreq(len(padded), d=s_uni[1] - s_uni[0])
    k = int(np.argmax(spec))
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        return float(freqs[k] + shift * (freqs[1] - freqs[0]))
    return float(freqs[k])


# ---------------------------------------------------------------------------
# serialization

def frames_to_jsonl(frames: list, path: str) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(f.scalar_record()) + "\n")


def save_snapshot(path: str, psi: np.ndarray, pg: PhysicalGrid, t: float) -> None:
    """Binary snapshot: little-endian float64 header (N, L, t) then
    interleaved re/im values."""
    header = np.array([pg.n_points, pg.half_width, t], dtype="<f8")
    body = np.empty(2 * pg.n_points, dtype="<f8")
    body[0::2] = psi.real
    body[1::2] = psi.imag
    with open(path, "wb") as fh:
        header.tofile(fh)
        body.tofile(fh)


def load_snapshot(path: str) -> tuple[np.ndarray, PhysicalGrid, float]:
    raw = np.fromfile(path, dtype="<f8")
    n = int(raw[0])
    pg = PhysicalGrid(raw[1], n)
    t = float(raw[2])
    body = raw[3:]
    return body[0::2] + 1j * body[1::2], pg, t
