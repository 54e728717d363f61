"""Stopping rules for the inner (i) and outer (n) iterations and the final
dielectric/metal decision."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ETA = 1e-6
DIELECTRIC_BELOW = 5.0
METAL_ABOVE = 10.0
STABLE_REL = 0.01


def inner_stop(B_history, D_history, eta: float = ETA) -> bool:
    """Decide whether inner iterations stop at the latest i.

    Parameters
    ----------
    B_history : sequence
        ``B_{n,1..i}``.
    D_history : sequence
        ``D_{n,0..i}``; the first entry is the norm before any inner step.
    """
    if len(B_history) == 0 or len(D_history) < 2:
        raise ValueError("need B_{n,i} and D_{n,i} for some i >= 1")
    B, D = B_history[-1], D_history[-1]
    if B <= eta or D <= eta:
        return True
    if len(B_history) >= 2 and B >= B_history[-2]:
        return True
    return D >= D_history[-2]


def gamma_weights(shape, spacing) -> np.ndarray:
    """Trapezoid area weights on a 2-D node lattice."""
    wts = []
    for n, h in zip(shape, spacing):
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
        wts.append(w)
    return np.outer(*wts)


def compute_norms(V_computed: np.ndarray, V_observed: np.ndarray, spacing) -> float:
    """Discrete L2 norm of ``V_computed - V_observed`` over the Gamma lattice."""
    a, b = np.asarray(V_computed, float), np.asarray(V_observed, float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"lattice mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum(gamma_weights(a.shape, spacing) * (a - b) ** 2)))


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """``||new - old|| / ||old||`` on nodes of a uniform grid."""
    den = np.linalg.norm(old)
    return float(np.linalg.norm(new - old) / den) if den > 0 else float("inf")


def first_minimum(values) -> int | None:
    """0-based index of the first local minimum, or None if none is confirmed yet.

    An entry counts once a strictly larger successor is seen; the first entry
    needs no predecessor.

    >>> first_minimum([5, 3, 4, 6])
    1
    """
    v = list(values)
    for k in range(len(v) - 1):
        if (k == 0 or v[k] <= v[k - 1]) and v[k] < v[k + 1]:
            return k
    return None


def first_stable(values, rel: float = STABLE_REL) -> int | None:
    """First k whose relative change from k-1 is below ``rel``."""
    v = list(values)
    for k in range(1, len(v)):
        if abs(v[k] - v[k - 1]) < rel * abs(v[k - 1]):
            return k
    return None


def first_min_or_stable(values, rel: float = STABLE_REL) -> int | None:
    found = [k for k in (first_minimum(values), first_stable(values, rel)) if k is not None]
    return min(found) if found else None


def classify(eps_value: float) -> str:
    if eps_value < DIELECTRIC_BELOW:
        return "dielectric"
    if eps_value > METAL_ABOVE:
        return "metallic"
    return "undetermined"


@dataclass
class NormHistory:
    """Norms per interval; lists are indexed by ``n - 1``."""

    first: list = field(default_factory=list)
    final: list = field(default_factory=list)
    B: list = field(default_factory=list)
    D: list = field(default_factory=list)
    eta: float = ETA

    @property
    def m(self) -> list[int]:
        return [len(b) for b in self.B]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "first_norm", "final_norm", "inner_iterations"])
            for n, (d0, dm, b) in enumerate(zip(self.first, self.final, self.B), start=1):
                wr.writerow([n, repr(d0), repr(dm), len(b)])

    def to_dict(self) -> dict:
        return {"first": self.first, "final": self.final, "B": self.B, "D": self.D, "eta": self.eta}


@dataclass(frozen=True)
class Selection:
    """Outcome of the outer stopping rule. ``index`` is 0-based (interval n = index + 1)."""

    index: int
    eps_value: float
    cls: str
    rule: str
    N_bar: int | None = None
    M_bar: int | None = None
    N_tilde: int | None = None
    eps_tilde: float | None = None

    @property
    def n_comp(self) -> float:
        return float(np.sqrt(self.eps_value))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("index", "eps_value", "cls", "rule", "N_bar", "M_bar", "N_tilde", "eps_tilde")}
        d["n_comp"] = self.n_comp
        return d


def classify_and_select(history: NormHistory, snapshot_max, N: int, last_max: float | None = None,
                        rel: float = STABLE_REL) -> Selection | None:
    """Apply the outer rule after the latest completed interval.

    Parameters
    ----------
    snapshot_max : sequence
        ``max eps_{n,0}`` over Omega for each completed n.
    N : int
        Number of intervals in the ladder.
    last_max : float, optional
        ``max eps_{N}`` after the last interval, used when no decision is
        reached by ``n = N``.

    Returns
    -------
    Selection or None
        None means continue with the next interval.
    """
    done = len(history.final)
    if len(history.first) != done or len(snapshot_max) < done:
        raise ValueError("history and snapshots are out of step")
    at_end = done >= N
    N_bar = first_minimum(history.first)
    M_bar = first_min_or_stable(history.final, rel)

    def fallback(reason):
        warnings.warn(f"stopping rule undecided at n = N ({reason}); using the last interval", RuntimeWarning)
        val = float(last_max if last_max is not None else snapshot_max[done - 1])
        return Selection(done - 1, val, classify(val), "last", N_bar, M_bar)

    if N_bar is None or M_bar is None:
        return fallback("no minimum") if at_end else None
    idx = M_bar if M_bar < N_bar else N_bar
    eps_tilde = float(snapshot_max[idx])
    if eps_tilde < DIELECTRIC_BELOW or eps_tilde > METAL_ABOVE:
        return Selection(idx, eps_tilde, classify(eps_tilde), "first", N_bar, M_bar, None, eps_tilde)
    if not at_end:
        return None
    lo = N_bar + 2
    if lo > done - 1:
        return fallback("no interval after the first minimum")
    N_tilde = lo + int(np.argmin(history.final[lo:done]))
    val = float(snapshot_max[N_tilde])
    return Selection(N_tilde, val, classify(val), "global", N_bar, M_bar, N_tilde, eps_tilde)
