"""Explicit FDTD solver for ``eps(x) u_tt - Laplace(u) = 0`` on the prism G.

Boundary rows: the front face (largest z) launches a plane wave travelling
toward -z and absorbs outgoing waves, the back face (smallest z) absorbs, and
the four lateral faces are homogeneous Neumann. Neumann-type rows use a
mirrored ghost node so the scheme stays second order up to the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid3, ScalarField, TraceSet

EPS_MAX = 15.0


class CFLError(ValueError):
    """Time step violates the stability bound."""


class ForwardInstability(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite wave field at step {step}")
        self.step = step


@dataclass(frozen=True)
class SourcePulse:
    """One period of ``sin(omega t)``; zero after ``t1 = 2 pi / omega``."""

    omega: float = 30.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    @property
    def t1(self) -> float:
        return 2.0 * math.pi / self.omega

    def amplitude(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t <= self.t1), np.sin(self.omega * t), 0.0)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t <= self.t1), self.omega * np.cos(self.omega * t), 0.0)

    def laplace(self, s):
        """Closed-form Laplace transform of the pulse."""
        s = np.asarray(s, dtype=float)
        w = self.omega
        return w * (1.0 - np.exp(-2.0 * math.pi * s / w)) / (s * s + w * w)


@dataclass(frozen=True)
class TimeSteppingPlan:
    tau: float = 0.003
    T: float = 1.2

    def __post_init__(self):
        if self.tau <= 0 or self.T <= 0:
            raise ValueError("tau and T must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.tau))

    def cfl_ratio(self, grid: Grid3, eps_min: float = 1.0) -> float:
        inv = math.sqrt(sum(1.0 / h**2 for h in grid.spacing))
        return self.tau * inv / math.sqrt(eps_min)

    def check(self, grid: Grid3, eps_min: float = 1.0) -> None:
        r = self.cfl_ratio(grid, eps_min)
        if r > 1.0:
            raise CFLError(f"CFL condition violated: tau*sqrt(sum 1/h^2)*c_max = {r:.4f} > 1")


@dataclass
class ForwardResult:
    traces: list[TraceSet]
    laplace: dict[float, np.ndarray] = field(default_factory=dict)
    energy: np.ndarray | None = None


def _lateral_window(grid: Grid3, lateral: str):
    if lateral == "omega":
        sx, sy, _ = grid.omega_slices
    elif lateral == "full":
        sx, sy = slice(None), slice(None)
    else:
        raise ValueError(f"unknown lateral window {lateral!r}")
    return sx, sy


def trapezoid_weights(nt: int, tau: float) -> np.ndarray:
    wts = np.full(nt, tau)
    wts[0] = wts[-1] = 0.5 * tau
    return wts


def _second_difference(u, out, axis, h2):
    """Mirror-ghost second difference along ``axis`` added into ``out``."""
    a = np.moveaxis(u, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] += (a[2:] - 2.0 * a[1:-1] + a[:-2]) / h2
    o[0] += 2.0 * (a[1] - a[0]) / h2
    o[-1] += 2.0 * (a[-2] - a[-1]) / h2


def _trapezoid_factors(n: int) -> np.ndarray:
    f = np.ones(n)
    f[0] = f[-1] = 0.5
    return f


def _energy(u_new, u_old, eps, grid, tau):
    """Leapfrog energy between two consecutive levels.

    Kinetic part uses trapezoid node volumes; potential part is the mixed
    Dirichlet form ``a(u_new, u_old)`` of the mirror-ghost Laplacian, for which
    the scheme is energy-stable.
    """
    f = [_trapezoid_factors(n) * h for n, h in zip(grid.shape, grid.spacing)]
    vol = f[0][:, None, None] * f[1][None, :, None] * f[2][None, None, :]
    kin = 0.5 * np.sum(vol * eps * ((u_new - u_old) / tau) ** 2)
    pot = 0.0
    for axis in range(3):
        h = grid.spacing[axis]
        t1, t2 = (f[b] for b in range(3) if b != axis)
        area = np.outer(t1, t2)
        da = np.diff(np.moveaxis(u_new, axis, 0), axis=0)
        db = np.diff(np.moveaxis(u_old, axis, 0), axis=0)
        pot += 0.5 * np.sum(area[None] * da * db) / h
    return kin + pot


def solve_forward(
    eps: ScalarField,
    pulse: SourcePulse,
    plan: TimeSteppingPlan,
    record_planes=(),
    *,
    lateral: str = "omega",
    laplace_s=(),
    track_energy: bool = False,
) -> ForwardResult:
    """Time-step the wave problem with coefficient ``eps`` from rest.

    Parameters
    ----------
    eps : ScalarField
        Coefficient on G, values in [1, 15].
    record_planes : sequence of float
        z coordinates (grid planes) where traces are sampled every step.
    lateral : {"omega", "full"}
        Lateral extent of the recorded planes.
    laplace_s : sequence of float
        Pseudo frequencies at which the Laplace transform of u is accumulated
        on the Omega nodes (trapezoidal rule over [0, T]).

    Returns
    -------
    ForwardResult
        Traces in the order of ``record_planes``, and ``laplace[s]`` arrays of
        Omega shape.
    """
    grid = eps.grid
    e = eps.values
    if e.min() < 1.0 - 1e-12 or e.max() > EPS_MAX + 1e-12:
        raise ValueError("eps outside the admissible range [1, 15]")
    plan.check(grid, eps_min=1.0)

    tau, nsteps = plan.tau, plan.steps
    nt = nsteps + 1
    hx, hy, hz = grid.spacing
    c = tau * tau / e
    beta = np.zeros(grid.shape)
    beta[:, :, 0] = tau / (hz * e[:, :, 0])
    beta[:, :, -1] = tau / (hz * e[:, :, -1])
    denom = 1.0 + beta
    keep = 1.0 - beta
    c_front = c[:, :, -1] * 4.0 / hz

    sx, sy = _lateral_window(grid, lateral)
    plane_idx = [grid.index_of(2, z) for z in record_planes]
    records = [np.empty(np.zeros(grid.shape)[sx, sy, 0].shape + (nt,)) for _ in plane_idx]

    s_list = [float(s) for s in laplace_s]
    s_arr = np.asarray(s_list)
    tw = trapezoid_weights(nt, tau)
    oms = grid.omega_slices
    acc = np.zeros((len(s_list),) + grid.omega_shape) if s_list else None

    energy = np.empty(nsteps) if track_energy else None

    u_old = np.zeros(grid.shape)
    u = np.zeros(grid.shape)
    lap = np.empty(grid.shape)
    h2 = (hx * hx, hy * hy, hz * hz)

    for rec, k in zip(records, plane_idx):
        rec[..., 0] = u[sx, sy, k]

    for n in range(nsteps):
        t = n * tau
        lap.fill(0.0)
        for axis in range(3):
            _second_difference(u, lap, axis, h2[axis])
        u_new = 2.0 * u - keep * u_old + c * lap
        # cell average of f' over [t - tau/2, t + tau/2]; sums telescope to zero net injection
        drive = float(pulse.amplitude(t + 0.5 * tau) - pulse.amplitude(t - 0.5 * tau)) / tau
        u_new[:, :, -1] += c_front * drive
        u_new /= denom

        if track_energy:
            energy[n] = _energy(u_new, u, e, grid, tau)
        u_old, u = u, u_new
        for rec, k in zip(records, plane_idx):
            rec[..., n + 1] = u[sx, sy, k]
        if acc is not None:
            coef = tw[n + 1] * np.exp(-s_arr * (n + 1) * tau)
            acc += coef[:, None, None, None] * u[oms][None]
        if (n & 63) == 63 and not np.isfinite(u).all():
            raise ForwardInstability(n + 1)

    if not np.isfinite(u).all():
        raise ForwardInstability(nsteps)

    lat_origin = (grid.axis_coords(0)[sx][0], grid.axis_coords(1)[sy][0])
    traces = [
        TraceSet(2, float(grid.axis_coords(2)[k]), lat_origin, (hx, hy), tau, rec)
        for rec, k in zip(records, plane_idx)
    ]
    lap_out = {s: acc[i] for i, s in enumerate(s_list)} if acc is not None else {}
    return ForwardResult(traces, lap_out, energy)


def incident_trace(t, z, pulse: SourcePulse, z_front: float):
    """Homogeneous-medium plane wave ``f(t - (z_front - z))``."""
    return pulse.amplitude(np.asarray(t, dtype=float) - (z_front - z))


def analytic_plane_wave_w(z, s, pulse: SourcePulse, z_front: float):
    """Laplace transform of the homogeneous plane wave at depth ``z``."""
    z = np.asarray(z, dtype=float)
    if np.any(np.asarray(s) <= 0):
        raise ValueError("s must be positive")
    if np.any(z > z_front + 1e-12):
        raise ValueError("z must not exceed z_front")
    return np.exp(-np.asarray(s) * (z_front - z)) * pulse.laplace(s)


def analytic_w0(x, x0, s: float) -> float:
    """Laplace-domain fundamental solution ``exp(-s r) / (4 pi r)``."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(x0, dtype=float)))
    if r == 0.0:
        raise ValueError("x coincides with the source point")
    if s < 0:
        raise ValueError("s must be non-negative")
    return math.exp(-s * r) / (4.0 * math.pi * r)
