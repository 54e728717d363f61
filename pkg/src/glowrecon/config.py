"""Run configuration: JSON schema, presets and validation.

A config is a JSON object. Every key is optional except where noted::

    {
      "preset": "mini",                 # mini | test1 | test2 | test3
      "grid": {"h": 0.02, "g_lo": [...], "g_hi": [...],
               "omega_lo": [...], "omega_hi": [...]},
      "data_h": 0.01,                   # simulate on a finer grid than the inversion
      "phantom": "block.json",          # path (relative to the config) or inline spec
      "pulse": {"omega": 30.0},
      "time": {"tau": 0.003, "T": 1.2},
      "ladder": {"s_min": 8.0, "s_max": 10.0, "h": 0.05},
      "mu": 20.0, "eta": 1e-6, "i_max": 5, "tail_at": "s_n",
      "measurement_z": 0.08,
      "corruption": {"direct": [d, a], "echoes": [[d, a]], "sigma": 0.02, "t0": 0.05, "gain": 1.0},
      "preprocess": {"gate_start": 0.0, "gate_len": null, "propagate_dist": null,
                     "min_correlation": 0.7, "calibration_phantom": {...}},
      "stage_two": {"keep_fraction": 0.5, "image_fraction": 0.9},
      "true_eps": 4.45,                 # optional, used by the report table
      "label": "block",
      "output": "runs/block",           # relative to the config file
      "seed": 0
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .forward import SourcePulse, TimeSteppingPlan
from .globconv import TAIL_MODES, InversionConfig
from .grid import Grid3, make_grid
from .laplace import PseudoFreqLadder
from .phantom import PhantomSpec, load_phantom
from .postprocess import StageTwoConfig
from .preprocess import CorruptionModel, PipelineParams


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


_G_WIDE = ((-0.56, -0.56, -0.16), (0.56, 0.56, 0.1))
_OMEGA_WIDE = ((-0.5, -0.5, -0.1), (0.5, 0.5, 0.04))
_OMEGA_SMALL = ((-0.2, -0.2, -0.1), (0.2, 0.2, 0.04))

PRESETS = {
    "test1": {"g": _G_WIDE, "omega": _OMEGA_WIDE, "h": 0.02, "T": 1.2},
    "test2": {"g": _G_WIDE, "omega": _OMEGA_WIDE, "h": 0.01, "T": 1.2},
    "test3": {"g": _G_WIDE, "omega": _OMEGA_SMALL, "h": 0.02, "T": 1.2},
    # reduced buffer and record length; exp(-8 T) stays below 1e-3
    "mini": {"g": ((-0.3, -0.3, -0.16), (0.3, 0.3, 0.1)), "omega": _OMEGA_SMALL, "h": 0.02, "T": 0.9},
}


@dataclass(frozen=True)
class GridSpec:
    g_lo: tuple
    g_hi: tuple
    omega_lo: tuple
    omega_hi: tuple
    h: float

    def build(self, h: float | None = None) -> Grid3:
        return make_grid(self.g_lo, self.g_hi, self.omega_lo, self.omega_hi, h or self.h)


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    pulse: SourcePulse = field(default_factory=SourcePulse)
    plan: TimeSteppingPlan = field(default_factory=TimeSteppingPlan)
    ladder: PseudoFreqLadder = field(default_factory=PseudoFreqLadder)
    mu: float = 20.0
    eta: float = 1e-6
    i_max: int = 5
    tail_at: str = "s_n"
    data_h: float | None = None
    measurement_z: float = 0.08
    corruption: CorruptionModel | None = None
    preprocess: PipelineParams = field(default_factory=PipelineParams)
    calibration_phantom: PhantomSpec | None = None
    stage_two: StageTwoConfig = field(default_factory=StageTwoConfig)
    true_eps: float | None = None
    label: str = "run"
    preset: str = "custom"
    output: Path = Path("run")
    seed: int = 0

    def inversion(self) -> InversionConfig:
        return InversionConfig(self.ladder, self.mu, self.eta, self.i_max, self.pulse, self.plan, self.tail_at)

    def inversion_grid(self) -> Grid3:
        return self.grid.build()

    def data_grid(self) -> Grid3:
        return self.grid.build(self.data_h)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))

    def validate(self) -> None:
        grid = self.inversion_grid()
        self.plan.check(grid)
        if self.data_h is not None:
            self.plan.check(self.data_grid())
        if self.ladder.s_min * self.plan.T < 6.9:
            raise ConfigError(f"T = {self.plan.T} too short for s = {self.ladder.s_min}: exp(-sT) >= 1e-3")
        front = grid.upper[2]
        if not grid.z_gamma < self.measurement_z < front:
            raise ConfigError(f"measurement plane z = {self.measurement_z} must lie between Gamma and the front face")
        for g in {grid, self.data_grid()}:
            g.index_of(2, self.measurement_z)
        if self.tail_at not in TAIL_MODES:
            raise ConfigError(f"tail_at must be one of {TAIL_MODES}")

    @property
    def propagate_distance(self) -> float:
        d = self.preprocess.distance
        return d if d else self.measurement_z - self.inversion_grid().z_gamma


def _tuple3(v, what):
    if len(v) != 3:
        raise ConfigError(f"{what} needs three values")
    return tuple(float(x) for x in v)


def _phantom(value, base: Path) -> PhantomSpec:
    if value is None:
        return PhantomSpec()
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        if not path.exists():
            raise ConfigError(f"phantom file {path} not found")
        return load_phantom(path)
    return PhantomSpec.from_dict(value)


def from_dict(d: dict, base: Path = Path(".")) -> RunConfig:
    """Build and validate a RunConfig; raises ConfigError on any problem."""
    try:
        preset_name = d.get("preset", "mini")
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
        pre = PRESETS[preset_name]
        g = d.get("grid", {})
        gspec = GridSpec(
            _tuple3(g.get("g_lo", pre["g"][0]), "g_lo"), _tuple3(g.get("g_hi", pre["g"][1]), "g_hi"),
            _tuple3(g.get("omega_lo", pre["omega"][0]), "omega_lo"),
            _tuple3(g.get("omega_hi", pre["omega"][1]), "omega_hi"), float(g.get("h", pre["h"])),
        )
        t = d.get("time", {})
        lad = d.get("ladder", {})
        ladder = PseudoFreqLadder(float(lad.get("s_min", 8.0)), float(lad.get("s_max", 10.0)), float(lad.get("h", 0.05)))
        pp = d.get("preprocess", {})
        params = PipelineParams(pp.get("gate_start"), pp.get("gate_len"), float(pp.get("propagate_dist") or 0.0),
                                float(pp.get("min_correlation", 0.7)))
        st = d.get("stage_two", {})
        cfg = RunConfig(
            grid=gspec,
            phantom=_phantom(d.get("phantom"), base),
            pulse=SourcePulse(float(d.get("pulse", {}).get("omega", 30.0))),
            plan=TimeSteppingPlan(float(t.get("tau", 0.003)), float(t.get("T", pre["T"]))),
            ladder=ladder,
            mu=float(d.get("mu", 20.0)),
            eta=float(d.get("eta", 1e-6)),
            i_max=int(d.get("i_max", 5)),
            tail_at=str(d.get("tail_at", "s_n")),
            data_h=float(d["data_h"]) if d.get("data_h") else None,
            measurement_z=float(d.get("measurement_z", 0.08)),
            corruption=CorruptionModel.from_dict(d["corruption"]) if d.get("corruption") else None,
            preprocess=params,
            calibration_phantom=_phantom(pp["calibration_phantom"], base) if pp.get("calibration_phantom") else None,
            stage_two=StageTwoConfig(float(st.get("keep_fraction", 0.5)), float(st.get("image_fraction", 0.9))),
            true_eps=float(d["true_eps"]) if d.get("true_eps") is not None else None,
            label=str(d.get("label", "run")),
            preset=preset_name,
            output=(base / d.get("output", "run")),
            seed=int(d.get("seed", 0)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(d, path.parent)
