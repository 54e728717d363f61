"""Structured grid geometry, node fields, boundary traces and their binary files.

Coordinates are dimensionless (lengths divided by one meter). Arrays are
indexed ``[ix, iy, iz]``; on disk node values are written x-fastest.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

BUFFER = 0
OMEGA = 1

FIELD_MAGIC = b"GLWR"
TRACE_MAGIC = b"GLWT"
FORMAT_VERSION = 1

# magic, version, nx, ny, nz, origin[3], spacing[3], 8 reserved bytes
_FIELD_HEADER = struct.Struct("<4sIIII6d8x")
# magic, version, axis, n1, n2, nt, coord, origin[2], spacing[2], tau
_TRACE_HEADER = struct.Struct("<4sIIIII6d")

_REL_TOL = 1e-9


class GridError(ValueError):
    """Invalid grid geometry."""


class FormatError(ValueError):
    """Malformed or mismatching binary file."""


def _steps(lo, hi, h, what):
    n = (hi - lo) / h
    k = round(n)
    if k < 0 or abs(n - k) > _REL_TOL * max(1.0, abs(n)):
        raise GridError(f"{what}: extent {hi - lo:g} is not a multiple of spacing {h:g}")
    return k


@dataclass(frozen=True)
class Grid3:
    """Uniform node grid on the prism G with the sub-prism Omega marked.

    ``omega_lo``/``omega_hi`` are inclusive node-index bounds of Omega; Gamma
    is the Omega face at ``iz == omega_hi[2]``.
    """

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    shape: tuple[int, int, int]
    omega_lo: tuple[int, int, int]
    omega_hi: tuple[int, int, int]

    def __post_init__(self):
        if any(h <= 0 for h in self.spacing):
            raise GridError("spacing must be positive")
        if any(n < 3 for n in self.shape):
            raise GridError(f"need at least 3 nodes per axis, got {self.shape}")
        for a in range(3):
            lo, hi = self.omega_lo[a], self.omega_hi[a]
            if not 0 <= lo < hi < self.shape[a]:
                raise GridError(f"Omega index range [{lo}, {hi}] invalid on axis {a}")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(self.origin[a] + self.spacing[a] * (self.shape[a] - 1) for a in range(3))

    @property
    def omega_slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(lo, hi + 1) for lo, hi in zip(self.omega_lo, self.omega_hi))

    @property
    def omega_shape(self) -> tuple[int, int, int]:
        return tuple(hi - lo + 1 for lo, hi in zip(self.omega_lo, self.omega_hi))

    @property
    def omega_origin(self) -> tuple[float, float, float]:
        return tuple(self.origin[a] + self.spacing[a] * self.omega_lo[a] for a in range(3))

    @property
    def omega_bounds(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        lo = self.omega_origin
        hi = tuple(self.origin[a] + self.spacing[a] * self.omega_hi[a] for a in range(3))
        return lo, hi

    @property
    def gamma_index(self) -> int:
        return self.omega_hi[2]

    @property
    def z_gamma(self) -> float:
        return self.origin[2] + self.spacing[2] * self.omega_hi[2]

    @cached_property
    def region(self) -> np.ndarray:
        tags = np.full(self.shape, BUFFER, dtype=np.uint8)
        tags[self.omega_slices] = OMEGA
        tags.setflags(write=False)
        return tags

    @cached_property
    def gamma(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        sx, sy, _ = self.omega_slices
        mask[sx, sy, self.gamma_index] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def omega_boundary(self) -> np.ndarray:
        """Boolean mask over the Omega sub-array marking its boundary nodes."""
        return boundary_mask(self.omega_shape)

    def node_coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(*(self.axis_coords(a) for a in range(3)), indexing="ij")

    def omega_coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(c[self.omega_slices] for c in self.node_coords())

    def index_of(self, axis: int, coord: float) -> int:
        """Node index of a coordinate that must lie on a grid plane."""
        t = (coord - self.origin[axis]) / self.spacing[axis]
        k = round(t)
        if abs(t - k) > 1e-6 or not 0 <= k < self.shape[axis]:
            raise GridError(f"coordinate {coord} is not a grid plane on axis {axis}")
        return int(k)

    def to_dict(self) -> dict:
        lo, hi = self.omega_bounds
        return {
            "origin": list(self.origin),
            "spacing": list(self.spacing),
            "shape": list(self.shape),
            "upper": list(self.upper),
            "omega_lo": list(lo),
            "omega_hi": list(hi),
            "z_gamma": self.z_gamma,
        }


def boundary_mask(shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[0, :, :] = mask[-1, :, :] = True
    mask[:, 0, :] = mask[:, -1, :] = True
    mask[:, :, 0] = mask[:, :, -1] = True
    return mask


def make_grid(g_lo, g_hi, omega_lo, omega_hi, h) -> Grid3:
    """Build the grid for G = [g_lo, g_hi] with Omega = [omega_lo, omega_hi].

    ``h`` is a scalar or a per-axis triple. All extents must be multiples of
    the spacing; Omega must lie inside G.

    >>> g = make_grid((-0.56, -0.56, -0.16), (0.56, 0.56, 0.1),
    ...               (-0.5, -0.5, -0.1), (0.5, 0.5, 0.04), 0.02)
    >>> g.shape, round(g.z_gamma, 12)
    ((57, 57, 14), 0.04)
    """
    hs = (float(h),) * 3 if np.isscalar(h) else tuple(float(v) for v in h)
    if any(v <= 0 for v in hs):
        raise GridError("spacing must be positive")
    shape, lo_idx, hi_idx = [], [], []
    for a in range(3):
        if not g_hi[a] > g_lo[a]:
            raise GridError(f"zero-size axis {a}")
        if not (g_lo[a] <= omega_lo[a] < omega_hi[a] <= g_hi[a]):
            raise GridError(f"Omega [{omega_lo[a]}, {omega_hi[a]}] not inside G [{g_lo[a]}, {g_hi[a]}] on axis {a}")
        shape.append(_steps(g_lo[a], g_hi[a], hs[a], f"G axis {a}") + 1)
        lo_idx.append(_steps(g_lo[a], omega_lo[a], hs[a], f"Omega low offset axis {a}"))
        hi_idx.append(_steps(g_lo[a], omega_hi[a], hs[a], f"Omega high offset axis {a}"))
    return Grid3(tuple(float(v) for v in g_lo), hs, tuple(shape), tuple(lo_idx), tuple(hi_idx))


@dataclass
class ScalarField:
    """One finite real value per node of ``grid``."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise GridError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def constant(cls, grid: Grid3, value: float = 1.0) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def omega_values(self) -> np.ndarray:
        return self.values[self.grid.omega_slices]


@dataclass
class TraceSet:
    """Time records ``values[i, j, k] = u(x_ij, k * tau)`` on a grid-aligned plane."""

    axis: int
    coord: float
    origin: tuple[float, float]
    spacing: tuple[float, float]
    tau: float
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise FormatError("trace values must be (n1, n2, nt)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace contains non-finite values")

    @property
    def nt(self) -> int:
        return self.values.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.nt)

    def same_lattice(self, other: "TraceSet") -> bool:
        return (
            self.values.shape == other.values.shape
            and self.axis == other.axis
            and np.isclose(self.tau, other.tau, rtol=1e-12)
            and np.allclose(self.spacing, other.spacing, rtol=1e-12)
            and np.allclose(self.origin, other.origin, atol=1e-12)
        )

    def with_values(self, values, **changes) -> "TraceSet":
        kw = dict(axis=self.axis, coord=self.coord, origin=self.origin, spacing=self.spacing,
                  tau=self.tau, meta=dict(self.meta))
        kw.update(changes)
        return TraceSet(values=values, **kw)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_field(path, fld: ScalarField, metadata: dict | None = None) -> None:
    g = fld.grid
    header = _FIELD_HEADER.pack(FIELD_MAGIC, FORMAT_VERSION, *g.shape, *g.origin, *g.spacing)
    payload = np.ascontiguousarray(fld.values.ravel(order="F"), dtype="<f8").tobytes()
    path = Path(path)
    path.write_bytes(header + payload)
    meta = {"grid": g.to_dict()}
    if metadata:
        meta.update(metadata)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_field(path, grid: Grid3 | None = None) -> ScalarField:
    """Read a field file; with ``grid`` given, the header must match it."""
    raw = Path(path).read_bytes()
    if len(raw) < _FIELD_HEADER.size:
        raise FormatError("truncated header")
    magic, version, nx, ny, nz, *geo = _FIELD_HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC or version != FORMAT_VERSION:
        raise FormatError(f"not a field file (magic {magic!r}, version {version})")
    n = nx * ny * nz
    body = raw[_FIELD_HEADER.size:]
    if len(body) != 8 * n:
        raise FormatError(f"payload has {len(body)} bytes, expected {8 * n}")
    origin, spacing = tuple(geo[:3]), tuple(geo[3:])
    if grid is None:
        sidecar = sidecar_path(path)
        grid = _grid_from_sidecar(sidecar, origin, spacing, (nx, ny, nz))
    elif (
        grid.shape != (nx, ny, nz)
        or not np.allclose(grid.origin, origin, rtol=0, atol=1e-12)
        or not np.allclose(grid.spacing, spacing, rtol=1e-12)
    ):
        raise FormatError(f"header {(nx, ny, nz)} does not match grid {grid.shape}")
    values = np.frombuffer(body, dtype="<f8").reshape((nx, ny, nz), order="F").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite values in payload")
    return ScalarField(grid, values)


def _grid_from_sidecar(sidecar: Path, origin, spacing, shape) -> Grid3:
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())["grid"]
        lo = [round((meta["omega_lo"][a] - origin[a]) / spacing[a]) for a in range(3)]
        hi = [round((meta["omega_hi"][a] - origin[a]) / spacing[a]) for a in range(3)]
        return Grid3(origin, spacing, shape, tuple(lo), tuple(hi))
    # no region information: treat the interior as Omega
    return Grid3(origin, spacing, shape, (1, 1, 1), tuple(n - 2 for n in shape))


def write_traces(path, traces: TraceSet) -> None:
    n1, n2, nt = traces.values.shape
    header = _TRACE_HEADER.pack(
        TRACE_MAGIC, FORMAT_VERSION, traces.axis, n1, n2, nt,
        traces.coord, *traces.origin, *traces.spacing, traces.tau,
    )
    payload = np.ascontiguousarray(traces.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_traces(path) -> TraceSet:
    raw = Path(path).read_bytes()
    if len(raw) < _TRACE_HEADER.size:
        raise FormatError("truncated header")
    magic, version, axis, n1, n2, nt, coord, o1, o2, h1, h2, tau = _TRACE_HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC or version != FORMAT_VERSION:
        raise FormatError(f"not a trace file (magic {magic!r}, version {version})")
    body = raw[_TRACE_HEADER.size:]
    if len(body) != 8 * n1 * n2 * nt:
        raise FormatError("payload size does not match header")
    values = np.frombuffer(body, dtype="<f8").reshape((n1, n2, nt)).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite values in payload")
    return TraceSet(axis, coord, (o1, o2), (h1, h2), tau, values)
