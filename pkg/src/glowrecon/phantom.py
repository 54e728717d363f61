"""Piecewise-constant ground-truth dielectric phantoms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid3, ScalarField

EPS_BOUND = 15.0
SHAPE_KINDS = ("box", "sphere", "cylinder")


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class Shape:
    """A solid with constant interior value.

    ``size`` holds half-widths for a box, ``(radius,)`` for a sphere and
    ``(radius, half_height)`` for a cylinder whose axis is parallel to z.
    """

    kind: str
    center: tuple[float, float, float]
    size: tuple[float, ...]
    eps: float

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise PhantomError(f"unknown shape kind {self.kind!r}")
        need = {"box": 3, "sphere": 1, "cylinder": 2}[self.kind]
        if len(self.size) != need or any(v <= 0 for v in self.size):
            raise PhantomError(f"{self.kind} needs {need} positive size values")
        if not 1.0 <= self.eps <= EPS_BOUND:
            raise PhantomError(f"interior value {self.eps} outside [1, {EPS_BOUND}]")

    def contains(self, x, y, z) -> np.ndarray:
        cx, cy, cz = self.center
        tol = 1e-9
        if self.kind == "box":
            a, b, c = self.size
            return (np.abs(x - cx) <= a + tol) & (np.abs(y - cy) <= b + tol) & (np.abs(z - cz) <= c + tol)
        if self.kind == "sphere":
            (r,) = self.size
            return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r * r + tol
        r, hh = self.size
        return ((x - cx) ** 2 + (y - cy) ** 2 <= r * r + tol) & (np.abs(z - cz) <= hh + tol)

    def bounds(self):
        c = np.asarray(self.center)
        if self.kind == "box":
            ext = np.asarray(self.size)
        elif self.kind == "sphere":
            ext = np.full(3, self.size[0])
        else:
            ext = np.array([self.size[0], self.size[0], self.size[1]])
        return c - ext, c + ext

    def volume(self) -> float:
        if self.kind == "box":
            return 8.0 * float(np.prod(self.size))
        if self.kind == "sphere":
            return 4.0 / 3.0 * np.pi * self.size[0] ** 3
        return np.pi * self.size[0] ** 2 * 2.0 * self.size[1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "size": list(self.size), "eps": self.eps}

    @classmethod
    def from_dict(cls, d) -> "Shape":
        return cls(d["kind"], tuple(d["center"]), tuple(d["size"]), float(d["eps"]))


@dataclass(frozen=True)
class PhantomSpec:
    shapes: tuple[Shape, ...] = field(default_factory=tuple)
    background: float = 1.0

    def to_dict(self) -> dict:
        return {"background": self.background, "shapes": [s.to_dict() for s in self.shapes]}

    @classmethod
    def from_dict(cls, d) -> "PhantomSpec":
        extra = set(d) - {"shapes", "background"}
        if extra:
            raise PhantomError(f"unknown phantom keys {sorted(extra)}")
        return cls(tuple(Shape.from_dict(s) for s in d.get("shapes", [])), float(d.get("background", 1.0)))

    @property
    def max_eps(self) -> float:
        return max([self.background] + [s.eps for s in self.shapes])


def load_phantom(path) -> PhantomSpec:
    return PhantomSpec.from_dict(json.loads(Path(path).read_text()))


def save_phantom(path, spec: PhantomSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2))


def _intersects_box(shape: Shape, lo, hi) -> bool:
    slo, shi = shape.bounds()
    return bool(np.all(shi > np.asarray(lo)) and np.all(slo < np.asarray(hi)))


def rasterize(spec: PhantomSpec, grid: Grid3) -> ScalarField:
    """Sample the phantom on the grid nodes.

    Overlaps resolve to the larger value; nodes outside Omega stay 1.
    """
    if spec.background != 1.0:
        raise PhantomError("background must be 1")
    lo, hi = grid.omega_bounds
    vals = np.ones(grid.shape)
    ox, oy, oz = grid.omega_coords()
    inner = vals[grid.omega_slices]
    for shape in spec.shapes:
        if not _intersects_box(shape, lo, hi):
            raise PhantomError(f"{shape.kind} at {shape.center} lies outside Omega")
        inside = shape.contains(ox, oy, oz)
        np.maximum(inner, np.where(inside, shape.eps, 1.0), out=inner)
    return ScalarField(grid, vals)


def heterogeneous_phantom(outer: Shape, inner: Shape) -> PhantomSpec:
    """Nested target: ``inner`` embedded in ``outer`` (e.g. metal inside a dielectric)."""
    olo, ohi = outer.bounds()
    ilo, ihi = inner.bounds()
    tol = 1e-12
    if np.any(ilo < olo - tol) or np.any(ihi > ohi + tol):
        raise PhantomError("inner shape is not contained in the outer shape")
    if inner.kind == "box" and outer.kind != "box":
        # corners of a box must also be inside curved solids
        corners = np.array(np.meshgrid(*zip(ilo, ihi), indexing="ij")).reshape(3, -1)
        if not outer.contains(*corners).all():
            raise PhantomError("inner shape is not contained in the outer shape")
    return PhantomSpec((outer, inner))


def block(center=(0.0, 0.0, -0.02), half=(0.06, 0.06, 0.04), eps=4.45) -> PhantomSpec:
    return PhantomSpec((Shape("box", tuple(center), tuple(half), eps),))


def sphere(center=(0.0, 0.0, -0.02), radius=0.05, eps=15.0) -> PhantomSpec:
    return PhantomSpec((Shape("sphere", tuple(center), (radius,), eps),))
