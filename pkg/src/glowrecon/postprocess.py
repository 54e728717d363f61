"""Second-stage shape refinement and image extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .globconv import Reconstruction, RunResult
from .grid import Grid3


@dataclass(frozen=True)
class StageTwoConfig:
    keep_fraction: float = 0.5
    image_fraction: float = 0.9

    def __post_init__(self):
        for name in ("keep_fraction", "image_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def threshold_and_box(eps: np.ndarray, keep_fraction: float = 0.5) -> tuple[np.ndarray, bool]:
    """Keep values above ``keep_fraction * max`` inside their (x, y) bounding box.

    Returns the new field and a flag that is True when the input carries no
    target (max equal to 1); in that case the input is returned unchanged.
    """
    eps = np.asarray(eps, dtype=float)
    top = eps.max()
    if top <= 1.0:
        return eps.copy(), True
    out = np.where(eps > keep_fraction * top, eps, 1.0)
    alive = out > 1.0
    xs = np.flatnonzero(alive.any(axis=(1, 2)))
    ys = np.flatnonzero(alive.any(axis=(0, 2)))
    mask = np.zeros(eps.shape[:2], dtype=bool)
    mask[xs[0]: xs[-1] + 1, ys[0]: ys[-1] + 1] = True
    out[~mask] = 1.0
    return out, False


def image_from(eps: np.ndarray, image_fraction: float = 0.9) -> np.ndarray:
    """Bimodal image: values at or above ``image_fraction * max`` survive, the rest become 1."""
    top = eps.max()
    if top <= 1.0:
        return np.ones_like(eps)
    return np.where(eps >= image_fraction * top, eps, 1.0)


@dataclass
class Footprint:
    """Support of an image in physical (x, y) coordinates plus its z range."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    centroid: tuple[float, float, float]
    nodes: int

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "centroid": list(self.centroid), "nodes": self.nodes}


def footprint(image: np.ndarray, grid: Grid3) -> Footprint | None:
    """Bounding box and centroid of the nodes where ``image > 1``."""
    mask = image > 1.0
    if not mask.any():
        return None
    axes = [grid.axis_coords(a)[sl] for a, sl in enumerate(grid.omega_slices)]
    pts = [ax[i] for ax, i in zip(axes, np.nonzero(mask))]
    lo = tuple(float(p.min()) for p in pts)
    hi = tuple(float(p.max()) for p in pts)
    cen = tuple(float(p.mean()) for p in pts)
    return Footprint(lo, hi, cen, int(mask.sum()))


@dataclass
class StageTwoResult:
    image: np.ndarray
    eps: np.ndarray
    empty: bool
    footprint: Footprint | None
    run: RunResult | None = None
    notes: list = field(default_factory=list)

    def report(self, grid: Grid3) -> dict:
        return {
            "empty": self.empty,
            "image_max": float(self.image.max()),
            "footprint": self.footprint.to_dict() if self.footprint else None,
            "notes": self.notes,
        }


def stage_two(recon: Reconstruction, stage_one: RunResult, config: StageTwoConfig | None = None) -> StageTwoResult:
    """Replay the first-stage schedule with thresholding and boxing after every update.

    The (x, y) box is recomputed from the current field each time it is applied.
    """
    config = config or StageTwoConfig()
    grid = recon.grid
    if stage_one.eps.max() <= 1.0:
        ones = np.ones_like(stage_one.eps)
        return StageTwoResult(ones, ones, True, None, None, ["empty first-stage field"])

    def boxed(e):
        return threshold_and_box(e, config.keep_fraction)[0]

    replay = recon.run(schedule=list(stage_one.schedule), post_update=boxed)
    idx = stage_one.selection.index
    if stage_one.selection.rule == "last" or idx >= len(replay.snapshots):
        eps = replay.finals[-1]
    else:
        eps = replay.snapshots[idx]
    image = image_from(eps, config.image_fraction)
    notes = ["box recomputed after every update"]
    return StageTwoResult(image, eps, bool(image.max() <= 1.0), footprint(image, grid), replay, notes)


def write_vtk(path, values: np.ndarray, origin, spacing, name: str = "eps") -> None:
    """Legacy ASCII VTK structured-points file (x varies fastest)."""
    nx, ny, nz = values.shape
    head = [
        "# vtk DataFile Version 3.0",
        f"{name} image",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        "ORIGIN {:.10g} {:.10g} {:.10g}".format(*origin),
        "SPACING {:.10g} {:.10g} {:.10g}".format(*spacing),
        f"POINT_DATA {values.size}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    body = "\n".join(f"{v:.10g}" for v in values.ravel(order="F"))
    Path(path).write_text("\n".join(head) + "\n" + body + "\n")
