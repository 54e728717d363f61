"""Pseudo-frequency data: Laplace transforms of traces, the functions v and q,
and the Dirichlet data for q on the boundary of Omega."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import FORMAT_VERSION, FormatError, TraceSet
from .forward import trapezoid_weights

PSEUDO_MAGIC = b"GLWS"
# magic, version, axis, n1, n2, ns, coord, origin[2], spacing[2]
_PSEUDO_HEADER = struct.Struct("<4sIIIII5d")

TRUNCATION_LIMIT = 1e-3


class NonPositiveError(ValueError):
    """Laplace-domain values that must be positive are not."""

    def __init__(self, count: int, what: str = "w"):
        super().__init__(f"{count} node(s) with non-positive {what}")
        self.count = count


@dataclass(frozen=True)
class PseudoFreqLadder:
    """Descending pseudo frequencies ``s_n = s_max - n h``, ``n = 0..N``."""

    s_min: float = 8.0
    s_max: float = 10.0
    h: float = 0.05

    def __post_init__(self):
        if not 0 < self.s_min < self.s_max:
            raise ValueError(f"need 0 < s_min < s_max, got {self.s_min}, {self.s_max}")
        if self.h <= 0:
            raise ValueError("ladder step must be positive")
        n = (self.s_max - self.s_min) / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ValueError("ladder step must divide s_max - s_min")

    @property
    def N(self) -> int:
        return int(round((self.s_max - self.s_min) / self.h))

    @property
    def values(self) -> np.ndarray:
        s = self.s_max - self.h * np.arange(self.N + 1)
        s[-1] = self.s_min
        return s

    def interval(self, n: int) -> tuple[float, float]:
        """``(s_n, s_{n-1})`` for ``n = 1..N``."""
        if not 1 <= n <= self.N:
            raise IndexError(f"interval {n} outside 1..{self.N}")
        s = self.values
        return float(s[n]), float(s[n - 1])


def laplace_transform(trace: TraceSet, s: float) -> np.ndarray:
    """Trapezoidal ``int_0^T u(t) exp(-s t) dt`` at every trace position."""
    return laplace_planes(trace, [s])[0]


def laplace_planes(trace: TraceSet, s_values) -> np.ndarray:
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    T = trace.tau * (trace.nt - 1)
    if np.any(s_values <= 0):
        raise ValueError("pseudo frequencies must be positive")
    if math.exp(-s_values.min() * T) >= TRUNCATION_LIMIT:
        raise ValueError(
            f"record length T={T:g} too short for s={s_values.min():g}: "
            f"exp(-sT)={math.exp(-s_values.min() * T):.2e}"
        )
    kernel = np.exp(-np.outer(s_values, trace.times)) * trapezoid_weights(trace.nt, trace.tau)
    return np.einsum("st,ijt->sij", kernel, trace.values)


def compute_v_q(w: np.ndarray, s_values) -> tuple[np.ndarray, np.ndarray]:
    """Return ``v = ln w / s^2`` and ``q = dv/ds`` along the leading ladder axis.

    ``d(ln w)/ds`` uses central differences on the ladder, one-sided at the
    ends; then ``q = d_s(ln w)/s^2 - 2 ln w / s^3``.
    """
    s = np.asarray(s_values, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape[0] != s.size:
        raise ValueError("leading axis of w must match the ladder")
    bad = int(np.count_nonzero(w <= 0))
    if bad:
        raise NonPositiveError(bad)
    lw = np.log(w)
    shape = (-1,) + (1,) * (w.ndim - 1)
    ss = s.reshape(shape)
    dlw = np.gradient(lw, s, axis=0, edge_order=2) if s.size > 2 else np.gradient(lw, s, axis=0)
    v = lw / ss**2
    q = dlw / ss**2 - 2.0 * lw / ss**3
    return v, q


def observed_tail(w_gamma: np.ndarray, s: float) -> np.ndarray:
    """Tail function seen by the data: ``ln W / s^2`` on Gamma."""
    w_gamma = np.asarray(w_gamma, dtype=float)
    bad = int(np.count_nonzero(w_gamma <= 0))
    if bad:
        raise NonPositiveError(bad, "W")
    return np.log(w_gamma) / (s * s)


def interval_averages(psi: np.ndarray) -> np.ndarray:
    """``(1/h) int_{s_n}^{s_{n-1}} psi ds`` by the trapezoid rule, n = 1..N."""
    return 0.5 * (psi[1:] + psi[:-1])


@dataclass
class BoundaryData:
    """Dirichlet data for q on the Omega node box.

    ``psi[k]`` is psi at ladder value ``s[k]`` and ``psi_n[n-1]`` the interval
    average; only entries on boundary nodes are meaningful (interior nodes
    hold zeros).
    """

    s: np.ndarray
    psi: np.ndarray
    psi_n: np.ndarray
    boundary: np.ndarray

    @property
    def psi_sbar(self) -> np.ndarray:
        return self.psi[0]


def assemble_boundary_data(gamma_q: np.ndarray, homogeneous_q: np.ndarray, ladder: PseudoFreqLadder,
                           boundary: np.ndarray) -> BoundaryData:
    """Combine data-derived q on Gamma with the homogeneous model elsewhere.

    Parameters
    ----------
    gamma_q : (N+1, nx, ny)
        q from the measured data on the Gamma face (``iz = -1`` of the box).
    homogeneous_q : (N+1, nx, ny, nz)
        q of the eps = 1 model on the Omega box.
    boundary : (nx, ny, nz) bool
        Boundary nodes of the Omega box.
    """
    s = ladder.values
    if homogeneous_q.shape[0] != s.size or gamma_q.shape[0] != s.size:
        raise ValueError("q stacks must cover every ladder value")
    if gamma_q.shape[1:] != homogeneous_q.shape[1:3]:
        raise ValueError(f"Gamma data {gamma_q.shape[1:]} do not cover the Gamma face {homogeneous_q.shape[1:3]}")
    if not np.all(np.isfinite(gamma_q)) or not np.all(np.isfinite(homogeneous_q[:, boundary])):
        raise ValueError("boundary data must be finite on every boundary node")
    psi = np.where(boundary[None], homogeneous_q, 0.0)
    psi[:, :, :, -1] = gamma_q
    return BoundaryData(s=s, psi=psi, psi_n=interval_averages(psi), boundary=boundary)


def write_pseudo(path, w: np.ndarray, s_values, trace: TraceSet) -> None:
    """Write per-s planes with the lattice description of ``trace``."""
    s_values = np.asarray(s_values, dtype=float)
    ns, n1, n2 = w.shape
    header = _PSEUDO_HEADER.pack(PSEUDO_MAGIC, FORMAT_VERSION, trace.axis, n1, n2, ns,
                                 trace.coord, *trace.origin, *trace.spacing)
    Path(path).write_bytes(header + s_values.astype("<f8").tobytes()
                           + np.ascontiguousarray(w, dtype="<f8").tobytes())


def read_pseudo(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _PSEUDO_HEADER.size:
        raise FormatError("truncated header")
    magic, version, _axis, n1, n2, ns, *_ = _PSEUDO_HEADER.unpack_from(raw)
    if magic != PSEUDO_MAGIC or version != FORMAT_VERSION:
        raise FormatError("not a pseudo-frequency file")
    body = raw[_PSEUDO_HEADER.size:]
    if len(body) != 8 * ns * (1 + n1 * n2):
        raise FormatError("payload size does not match header")
    s = np.frombuffer(body[: 8 * ns], dtype="<f8").copy()
    w = np.frombuffer(body[8 * ns:], dtype="<f8").reshape(ns, n1, n2).copy()
    return s, w
