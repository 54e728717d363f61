"""Synthetic measurement corruption and the four data preparation steps:
time-zero correction, scattered-signal extraction, propagation toward the
target, and amplitude calibration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import TraceSet


class NoDirectSignalError(ValueError):
    """The reference template was not found in the trace."""


class LatticeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionModel:
    """Lab-environment stand-in.

    ``direct`` is (delay, amplitude) of the transmitter-to-receiver signal,
    ``echoes`` are (delay, amplitude) pairs of delayed copies of the wave
    record, ``sigma`` is the noise level relative to the record peak, ``t0``
    the time-zero offset of the recorder and ``gain`` an unknown amplitude
    scale of the instrument.
    """

    direct: tuple[float, float] = (0.0, 0.0)
    echoes: tuple[tuple[float, float], ...] = ()
    sigma: float = 0.0
    t0: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        delays = [self.direct[0], self.t0] + [d for d, _ in self.echoes]
        if any(d < 0 for d in delays):
            raise ValueError("delays must be non-negative")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.gain <= 0:
            raise ValueError("gain must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionModel":
        return cls(tuple(d.get("direct", (0.0, 0.0))), tuple(tuple(e) for e in d.get("echoes", ())),
                   float(d.get("sigma", 0.0)), float(d.get("t0", 0.0)), float(d.get("gain", 1.0)))


def _delay(values: np.ndarray, samples: int) -> np.ndarray:
    """Shift records later (positive) or earlier (negative) by whole samples, zero filled."""
    out = np.zeros_like(values)
    nt = values.shape[-1]
    if samples >= 0:
        if samples < nt:
            out[..., samples:] = values[..., : nt - samples]
    elif -samples < nt:
        out[..., : nt + samples] = values[..., -samples:]
    return out


def corrupt(trace: TraceSet, model: CorruptionModel, seed: int, template=None) -> TraceSet:
    """Add echoes and the direct signal, then apply gain, a time-zero offset and noise.

    ``template(t)`` is the emitted waveform used for the direct signal;
    it is required only when the direct amplitude is nonzero.
    """
    tau = trace.tau
    clean = trace.values
    out = clean.copy()
    for delay, amp in model.echoes:
        out = out + amp * _delay(clean, int(round(delay / tau)))
    d_delay, d_amp = model.direct
    if d_amp != 0.0:
        if template is None:
            raise ValueError("a direct signal needs the emitted waveform")
        out = out + d_amp * np.asarray(template(trace.times - d_delay), dtype=float)
    # the instrument gain scales everything the receiver sees
    out = _delay(model.gain * out, int(round(model.t0 / tau)))
    if model.sigma > 0:
        rng = np.random.default_rng(seed)
        peak = np.abs(out).max()
        out = out + model.sigma * peak * rng.standard_normal(out.shape)
    return trace.with_values(out)


def _normalized_xcorr(x: np.ndarray, tmpl: np.ndarray) -> np.ndarray:
    """Correlation coefficient of ``tmpl`` against every window of ``x``."""
    L = tmpl.size
    num = np.correlate(x, tmpl, mode="valid")
    energy = np.convolve(x * x, np.ones(L), mode="valid")
    den = np.linalg.norm(tmpl) * np.sqrt(np.maximum(energy, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def detect_onset(trace: TraceSet, template: np.ndarray, min_correlation: float = 0.7) -> int:
    """Sample index where the template first matches the lateral-average record."""
    tmpl = np.asarray(template, dtype=float)
    if tmpl.ndim != 1 or tmpl.size < 2 or not np.any(tmpl):
        raise ValueError("template must be a nonzero 1-D sample array")
    mean = trace.values.reshape(-1, trace.nt).mean(axis=0)
    if tmpl.size > mean.size:
        raise ValueError("template longer than the record")
    c = _normalized_xcorr(mean, tmpl)
    above = np.flatnonzero(c >= min_correlation)
    if above.size == 0:
        raise NoDirectSignalError(f"no direct signal: peak correlation {c.max():.3f} < {min_correlation}")
    start = above[0]
    stop = start
    while stop + 1 < c.size and c[stop + 1] >= min_correlation:
        stop += 1
    return int(start + np.argmax(c[start: stop + 1]))


def time_zero_correct(trace: TraceSet, template: np.ndarray, onset: int,
                      min_correlation: float = 0.7) -> tuple[TraceSet, int]:
    """Shift the record so the detected direct signal starts at sample ``onset``.

    Returns the corrected trace and the applied shift in samples (positive
    means the record moved earlier).
    """
    found = detect_onset(trace, template, min_correlation)
    shift = found - int(onset)
    return trace.with_values(_delay(trace.values, -shift)), shift


def extract_scattered(total: TraceSet, incident: TraceSet, gate_start: float | None = None,
                      gate_len: float | None = None) -> TraceSet:
    """Subtract the background record and zero samples outside the gate window."""
    if not total.same_lattice(incident):
        raise LatticeMismatchError("total and incident records are on different lattices")
    diff = total.values - incident.values
    if gate_start is not None:
        t = total.times
        end = np.inf if gate_len is None else gate_start + gate_len
        diff = np.where((t >= gate_start) & (t <= end), diff, 0.0)
    return total.with_values(diff)


def propagate_data(scattered: TraceSet, d: float) -> TraceSet:
    """Move the record a distance ``d`` toward the target: ``u(t) -> u(t + d)``.

    Resampling uses a cubic spline in time; the plane coordinate drops by d.
    """
    if d == 0:
        return scattered.with_values(scattered.values.copy())
    T = scattered.tau * (scattered.nt - 1)
    if abs(d) >= T:
        raise ValueError(f"shift {d} exceeds the record length {T}")
    t = scattered.times
    spline = CubicSpline(t, scattered.values, axis=-1)
    tt = t + d
    inside = (tt >= 0) & (tt <= T)
    out = np.zeros_like(scattered.values)
    out[..., inside] = spline(tt[inside])
    return scattered.with_values(out, coord=scattered.coord - d)


def calibration_factor(measured: TraceSet, simulated: TraceSet) -> float:
    pm = float(np.abs(measured.values).max())
    ps = float(np.abs(simulated.values).max())
    if pm == 0.0:
        raise ValueError("calibration object has zero measured peak")
    if ps == 0.0:
        raise ValueError("calibration object has zero simulated peak")
    return ps / pm


def calibrate(scattered: TraceSet, measured: TraceSet, simulated: TraceSet) -> TraceSet:
    """Scale by the simulated-to-measured peak ratio of the calibrating object."""
    return scattered.with_values(calibration_factor(measured, simulated) * scattered.values)


@dataclass(frozen=True)
class PipelineParams:
    gate_start: float | None = None
    gate_len: float | None = None
    distance: float = 0.0
    min_correlation: float = 0.7


@dataclass
class PipelineOutput:
    scattered: TraceSet
    shifts: tuple[int, int]
    factor: float
    log: dict = field(default_factory=dict)


def process(total: TraceSet, background: TraceSet, template: np.ndarray, onset: int, params: PipelineParams,
            calibration: tuple[TraceSet, TraceSet] | None = None) -> PipelineOutput:
    """Run the four steps on a measured total/background pair.

    ``calibration`` is ``(measured, simulated)`` for the calibrating object,
    where the measured record has already been through steps 1 to 3.
    """
    tot, s1 = time_zero_correct(total, template, onset, params.min_correlation)
    bg, s2 = time_zero_correct(background, template, onset, params.min_correlation)
    sc = extract_scattered(tot, bg, params.gate_start, params.gate_len)
    sc = propagate_data(sc, params.distance)
    factor = 1.0
    if calibration is not None:
        factor = calibration_factor(*calibration)
        sc = sc.with_values(factor * sc.values)
    return PipelineOutput(sc, (s1, s2), factor, {"shift_total": s1, "shift_background": s2, "factor": factor})
