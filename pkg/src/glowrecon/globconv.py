"""Outer/inner iteration driver of the layer-stripping reconstruction.

Each interval ``[s_n, s_{n-1})`` solves a Dirichlet problem for q, rebuilds
v and w at ``s_n``, recovers eps, and updates the tail by a forward solve.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cwf import DEFAULT_MU, coefficient_table
from .fem import FemSystem, recover_epsilon, solve_dirichlet_laplace, solve_q_equation
from .forward import EPS_MAX, SourcePulse, TimeSteppingPlan, solve_forward
from .grid import Grid3, ScalarField, TraceSet
from .laplace import BoundaryData, PseudoFreqLadder, assemble_boundary_data, compute_v_q, laplace_planes
from .stopping import ETA, NormHistory, Selection, classify, classify_and_select, compute_norms, inner_stop, relative_change

log = logging.getLogger(__name__)

CLIP_ABORT_FRACTION = 0.2
TAIL_MODES = ("s_n", "s_bar")


class PositivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class InversionConfig:
    ladder: PseudoFreqLadder = field(default_factory=PseudoFreqLadder)
    mu: float = DEFAULT_MU
    eta: float = ETA
    i_max: int = 5
    pulse: SourcePulse = field(default_factory=SourcePulse)
    plan: TimeSteppingPlan = field(default_factory=TimeSteppingPlan)
    tail_at: str = "s_n"

    def __post_init__(self):
        if self.tail_at not in TAIL_MODES:
            raise ValueError(f"tail_at must be one of {TAIL_MODES}")
        if self.i_max < 1:
            raise ValueError("i_max must be at least 1")
        if self.mu <= 0 or self.eta <= 0:
            raise ValueError("mu and eta must be positive")


@dataclass
class InversionData:
    """Everything the iterations read from the measurements.

    ``W_gamma[k]`` is the Laplace transform of g on Gamma at ladder value k.
    """

    grid: Grid3
    boundary: BoundaryData
    W_gamma: np.ndarray

    def observed_tail(self, k: int) -> np.ndarray:
        s = self.boundary.s[k]
        return np.log(self.W_gamma[k]) / (s * s)


def homogeneous_laplace(grid: Grid3, config: InversionConfig) -> np.ndarray:
    """Laplace transforms of the eps = 1 wave on Omega at every ladder value."""
    s = config.ladder.values
    res = solve_forward(ScalarField.constant(grid), config.pulse, config.plan, laplace_s=s)
    return np.stack([res.laplace[float(v)] for v in s])


def prepare_data(grid: Grid3, g: TraceSet, config: InversionConfig, w_homogeneous: np.ndarray | None = None) -> InversionData:
    """Turn the Gamma traces into Dirichlet data for q on the Omega box."""
    if abs(g.coord - grid.z_gamma) > 1e-9:
        raise ValueError(f"data plane z={g.coord} is not Gamma (z={grid.z_gamma})")
    nx, ny, _ = grid.omega_shape
    if g.values.shape[:2] != (nx, ny):
        raise ValueError(f"data lattice {g.values.shape[:2]} does not match Gamma {nx, ny}")
    s = config.ladder.values
    W = laplace_planes(g, s)
    if w_homogeneous is None:
        w_homogeneous = homogeneous_laplace(grid, config)
    _, q_gamma = compute_v_q(W, s)
    _, q_hom = compute_v_q(w_homogeneous, s)
    bnd = grid.omega_boundary
    return InversionData(grid, assemble_boundary_data(q_gamma, q_hom, config.ladder, bnd), W)


def truncate(eps_bar: np.ndarray) -> np.ndarray:
    """Clamp recovered values to the admissible range [1, 15]."""
    return np.clip(np.nan_to_num(eps_bar, nan=1.0, posinf=EPS_MAX, neginf=1.0), 1.0, EPS_MAX)


@dataclass
class IterationRecord:
    n: int
    i: int
    B: float
    D: float
    max_eps: float
    clipped: int
    seconds: float


@dataclass
class RunResult:
    eps: np.ndarray
    selection: Selection
    history: NormHistory
    snapshots: list
    finals: list
    schedule: list
    records: list
    coefficients: list
    eps_init: np.ndarray

    @property
    def eps_comp(self) -> float:
        return self.selection.eps_value

    @property
    def n_comp(self) -> float:
        return self.selection.n_comp

    def report(self) -> dict:
        return {
            "eps_comp": self.eps_comp,
            "n_comp": self.n_comp,
            "class": self.selection.cls,
            "selection": self.selection.to_dict(),
            "schedule": self.schedule,
            "norms": self.history.to_dict(),
            "coefficients": [c.to_dict() for c in self.coefficients],
            "iterations": [{k: v for k, v in r.__dict__.items() if k != "seconds"} for r in self.records],
        }


class Reconstruction:
    """State of one reconstruction run over the pseudo-frequency ladder."""

    def __init__(self, data: InversionData, config: InversionConfig):
        self.data = data
        self.config = config
        self.grid = data.grid
        g = self.grid
        self.fem = FemSystem(g.omega_shape, g.spacing, g.omega_origin)
        self.coeffs = coefficient_table(config.ladder, config.mu)
        self.s = config.ladder.values
        self.h = config.ladder.h
        self.gamma_spacing = g.spacing[:2]

    # -- building blocks -----------------------------------------------------

    def embed(self, eps_omega: np.ndarray) -> ScalarField:
        vals = np.ones(self.grid.shape)
        vals[self.grid.omega_slices] = eps_omega
        return ScalarField(self.grid, vals)

    def forward(self, eps_omega: np.ndarray, s_values) -> dict:
        s_values = sorted({float(v) for v in s_values})
        res = solve_forward(self.embed(eps_omega), self.config.pulse, self.config.plan, laplace_s=s_values)
        return res.laplace

    def tail(self, w: np.ndarray, s: float) -> tuple[np.ndarray, int]:
        """``ln w / s^2`` with non-positive nodes clipped to the smallest positive value."""
        bad = ~(w > 0)
        nbad = int(bad.sum())
        if nbad:
            if nbad > CLIP_ABORT_FRACTION * w.size or nbad == w.size:
                raise PositivityError(f"{nbad} of {w.size} nodes with non-positive w at s={s:g}")
            w = np.where(bad, w[~bad].min(), w)
        return np.log(w) / (s * s), nbad

    def gamma_norm(self, V_s: np.ndarray, k: int) -> float:
        return compute_norms(V_s[:, :, -1], self.data.observed_tail(k), self.gamma_spacing)

    def initial_tail(self) -> np.ndarray:
        s_bar = self.s[0]
        p = solve_dirichlet_laplace(self.fem, -s_bar**2 * self.data.boundary.psi_sbar)
        return p / s_bar

    def eps_from_tail(self, V: np.ndarray, s: float) -> np.ndarray:
        w = np.exp(s * s * (V - V.max()))
        return truncate(recover_epsilon(self.fem, w, s))

    # -- the loop ---------------------------------------------------------------

    def run(self, schedule: list[int] | None = None,
            post_update: Callable[[np.ndarray], np.ndarray] | None = None) -> RunResult:
        """Iterate over the ladder.

        With ``schedule`` (inner iteration counts per interval) the stopping
        rules are bypassed and exactly that schedule is replayed; ``post_update``
        is applied to every truncated eps (used by the shape-refinement stage).
        """
        cfg = self.config
        s, h, N = self.s, self.h, cfg.ladder.N
        s_bar = s[0]
        fem = self.fem
        psi_n = self.data.boundary.psi_n

        V = self.initial_tail()
        eps = self.eps_from_tail(V, s_bar)
        if post_update is not None:
            eps = post_update(eps)
        eps_init = eps.copy()
        lap = self.forward(eps, [s_bar, s[1]])
        V_next_sn, _ = self.tail(lap[float(s[1])], s[1])

        sum_q = np.zeros(fem.shape)
        P = np.zeros((fem.conn.shape[0], 8, 3))
        history = NormHistory(eta=cfg.eta)
        snapshots, finals, records, done_schedule = [], [], [], []
        selection = None

        n_last = N if schedule is None else len(schedule)
        for n in range(1, n_last + 1):
            c = self.coeffs[n - 1]
            sn = s[n]
            snapshots.append(eps.copy())
            D_hist = [self.gamma_norm(V_next_sn, n)]
            B_hist = []
            history.first.append(D_hist[0])
            i_cap = cfg.i_max if schedule is None else schedule[n - 1]
            q = None
            for i in range(1, i_cap + 1):
                t0 = time.perf_counter()
                q = solve_q_equation(fem, P, fem.grad_at_qp(V), c.A1, c.A2, psi_n[n - 1])
                v = -h * q - h * sum_q + V
                w = np.exp(sn * sn * (v - v.max()))
                eps_new = truncate(recover_epsilon(fem, w, sn))
                if post_update is not None:
                    eps_new = post_update(eps_new)
                wanted = [s_bar, sn] + ([s[n + 1]] if n < N else [])
                lap = self.forward(eps_new, wanted)
                V_sn, nclip = self.tail(lap[float(sn)], sn)
                if cfg.tail_at == "s_n":
                    V, nclip2 = V_sn, 0
                else:
                    V, nclip2 = self.tail(lap[float(s_bar)], s_bar)
                if n < N:
                    V_next_sn, _ = self.tail(lap[float(s[n + 1])], s[n + 1])
                B_hist.append(relative_change(eps_new, eps))
                D_hist.append(self.gamma_norm(V_sn, n))
                eps = eps_new
                rec = IterationRecord(n, i, B_hist[-1], D_hist[-1], float(eps.max()), nclip + nclip2,
                                      time.perf_counter() - t0)
                records.append(rec)
                log.debug("n=%d i=%d B=%.3e D=%.3e max=%.3f", n, i, rec.B, rec.D, rec.max_eps)
                if schedule is None and inner_stop(B_hist, D_hist, cfg.eta):
                    break
            else:
                if schedule is None:
                    log.warning("interval %d hit the inner iteration cap %d", n, i_cap)
            sum_q += q
            P += h * fem.grad_at_qp(q)
            finals.append(eps.copy())
            history.B.append(B_hist)
            history.D.append(D_hist)
            history.final.append(D_hist[-1])
            done_schedule.append(len(B_hist))
            if schedule is None:
                selection = classify_and_select(history, [e.max() for e in snapshots], N,
                                                last_max=float(eps.max()))
                if selection is not None:
                    break

        if schedule is not None:
            val = float(eps.max())
            selection = Selection(len(schedule) - 1, val, classify(val), "replay")
            eps_comp = eps
        elif selection.rule == "last":
            eps_comp = finals[-1]
        else:
            eps_comp = snapshots[selection.index]
        return RunResult(eps_comp.copy(), selection, history, snapshots, finals, done_schedule,
                         records, self.coeffs, eps_init)


def invert(data: InversionData, config: InversionConfig) -> RunResult:
    return Reconstruction(data, config).run()
