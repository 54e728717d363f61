"""In-memory experiment chain shared by the CLI and the acceptance suite:
simulate -> corrupt -> preprocess -> invert -> postprocess."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .forward import solve_forward
from .globconv import InversionData, Reconstruction, RunResult, homogeneous_laplace, prepare_data
from .grid import Grid3, ScalarField, TraceSet
from .phantom import rasterize
from .postprocess import StageTwoResult, stage_two
from .preprocess import CorruptionModel, PipelineOutput, corrupt, detect_onset, extract_scattered, process, propagate_data, time_zero_correct


@dataclass
class Simulation:
    """Clean records of one phantom and of the eps = 1 reference on the data grid."""

    grid: Grid3
    eps: ScalarField
    total_meas: TraceSet
    reference_meas: TraceSet
    total_gamma: TraceSet
    reference_gamma: TraceSet
    calib_total_meas: TraceSet | None = None

    def traces(self) -> dict:
        out = {
            "total_meas": self.total_meas,
            "reference_meas": self.reference_meas,
            "total_gamma": self.total_gamma,
            "reference_gamma": self.reference_gamma,
        }
        if self.calib_total_meas is not None:
            out["calib_total_meas"] = self.calib_total_meas
        return out


def simulate(cfg: RunConfig) -> Simulation:
    grid = cfg.data_grid()
    planes = (cfg.measurement_z, grid.z_gamma)
    eps = rasterize(cfg.phantom, grid)
    tot = solve_forward(eps, cfg.pulse, cfg.plan, planes).traces
    ref = solve_forward(ScalarField.constant(grid), cfg.pulse, cfg.plan, planes).traces
    cal = None
    if cfg.calibration_phantom is not None:
        cal = solve_forward(rasterize(cfg.calibration_phantom, grid), cfg.pulse, cfg.plan, planes[:1]).traces[0]
    return Simulation(grid, eps, tot[0], ref[0], tot[1], ref[1], cal)


def direct_template(cfg: RunConfig) -> np.ndarray:
    """Emitted waveform sampled on the record clock over its support."""
    tau = cfg.plan.tau
    t = tau * np.arange(int(np.floor(cfg.pulse.t1 / tau)) + 1)
    return cfg.pulse.amplitude(t)


def restrict_lateral(trace: TraceSet, grid: Grid3) -> TraceSet:
    """Sample a plane record at the (x, y) nodes of ``grid``'s Omega window."""
    idx = []
    for a in range(2):
        want = grid.axis_coords(a)[grid.omega_slices[a]]
        pos = (want - trace.origin[a]) / trace.spacing[a]
        k = np.rint(pos).astype(int)
        if np.abs(pos - k).max() > 1e-6 or k.min() < 0 or k.max() >= trace.values.shape[a]:
            raise ValueError("record lattice does not contain the inversion lattice")
        idx.append(k)
    vals = trace.values[np.ix_(idx[0], idx[1])]
    origin = tuple(float(grid.axis_coords(a)[grid.omega_slices[a]][0]) for a in range(2))
    return trace.with_values(vals, origin=origin, spacing=tuple(grid.spacing[:2]))


def reference_onset(cfg: RunConfig, reference: TraceSet, model: CorruptionModel) -> int:
    """Template position on the emission clock for the ideal set-up.

    The direct signal overlaps the incident wave at the receiver, which biases
    the correlation peak by a few samples; locating the template on a clean
    synthetic background (direct signal only, no t0, noise or echoes) gives
    the same bias, so the correction aligns records to the true clock.
    """
    ideal = corrupt(reference, CorruptionModel(direct=model.direct), 0, cfg.pulse.amplitude)
    return detect_onset(ideal, direct_template(cfg), cfg.preprocess.min_correlation)


@dataclass
class Prepared:
    g: TraceSet
    scattered: TraceSet
    log: dict


def preprocess(cfg: RunConfig, sim: Simulation, incident_gamma: TraceSet | None = None) -> Prepared:
    """Turn simulated records into the Gamma data g on the inversion lattice.

    Without a corruption model the scattered field is read straight off the
    Gamma plane. With one, the measurement-plane records are corrupted and go
    through the four preparation steps, ending on Gamma after propagation.
    ``g`` is the incident field on the inversion grid plus the scattered field.
    """
    inv_grid = cfg.inversion_grid()
    log: dict = {"corrupted": cfg.corruption is not None}
    if cfg.corruption is None:
        scattered = extract_scattered(sim.total_gamma, sim.reference_gamma)
    else:
        model, seed = cfg.corruption, cfg.seed
        template = direct_template(cfg)
        wave = cfg.pulse.amplitude
        onset = reference_onset(cfg, sim.reference_meas, model)
        total = corrupt(sim.total_meas, model, seed, wave)
        background = corrupt(sim.reference_meas, model, seed + 1, wave)
        params = cfg.preprocess
        params = replace(params, distance=cfg.propagate_distance)
        calibration = None
        if sim.calib_total_meas is not None:
            cal_meas = corrupt(sim.calib_total_meas, model, seed + 2, wave)
            cal_bg = corrupt(sim.reference_meas, model, seed + 3, wave)
            c_tot, _ = time_zero_correct(cal_meas, template, onset, params.min_correlation)
            c_bg, _ = time_zero_correct(cal_bg, template, onset, params.min_correlation)
            measured = propagate_data(extract_scattered(c_tot, c_bg, params.gate_start, params.gate_len),
                                      params.distance)
            simulated = propagate_data(extract_scattered(sim.calib_total_meas, sim.reference_meas, params.gate_start,
                                                         params.gate_len), params.distance)
            calibration = (measured, simulated)
        out: PipelineOutput = process(total, background, template, onset, params, calibration)
        scattered = out.scattered
        if abs(scattered.coord - sim.grid.z_gamma) > 1e-9:
            raise ValueError(f"propagated plane z={scattered.coord} is not Gamma z={sim.grid.z_gamma}")
        scattered = scattered.with_values(scattered.values, coord=sim.grid.z_gamma)
        log.update(out.log)
    scattered = restrict_lateral(scattered, inv_grid)
    if incident_gamma is None:
        res = solve_forward(ScalarField.constant(inv_grid), cfg.pulse, cfg.plan, (inv_grid.z_gamma,))
        incident_gamma = res.traces[0]
    if incident_gamma.values.shape != scattered.values.shape:
        raise ValueError("incident and scattered records differ in shape")
    g = incident_gamma.with_values(incident_gamma.values + scattered.values)
    return Prepared(g, scattered, log)


@dataclass
class Inversion:
    recon: Reconstruction
    result: RunResult


def invert(cfg: RunConfig, g: TraceSet, w_homogeneous: np.ndarray | None = None) -> Inversion:
    grid = cfg.inversion_grid()
    inv = cfg.inversion()
    if w_homogeneous is None:
        w_homogeneous = homogeneous_laplace(grid, inv)
    data: InversionData = prepare_data(grid, g, inv, w_homogeneous)
    recon = Reconstruction(data, inv)
    return Inversion(recon, recon.run())


def postprocess(cfg: RunConfig, inversion: Inversion) -> StageTwoResult:
    return stage_two(inversion.recon, inversion.result, cfg.stage_two)


@dataclass
class Experiment:
    simulation: Simulation
    prepared: Prepared
    inversion: Inversion
    stage_two: StageTwoResult | None


def run_all(cfg: RunConfig, with_stage_two: bool = True) -> Experiment:
    sim = simulate(cfg)
    prep = preprocess(cfg, sim)
    inv = invert(cfg, prep.g)
    st = postprocess(cfg, inv) if with_stage_two else None
    return Experiment(sim, prep, inv, st)
