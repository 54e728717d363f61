"""Interval coefficients from Carleman-weighted integration of the q equation.

On ``[s_n, s_{n-1})`` q is constant in s, so with ``a = s_{n-1} - s`` the
s-integral of grad q above s equals ``a grad q_n + h sum_{j<n} grad q_j``.
Multiplying the integral-differential equation by ``C = exp(-mu a)``,
integrating over the interval and dividing by ``I0 = int C ds`` gives

    A1 = (2/I0) int (s^2 - 2 s a) C ds
    A2 = (2/I0) int s C ds
    B  = (2/I0) int (s^2 a - s a^2) C ds

which reduce to moments ``m_k = int_0^h a^k exp(-mu a) da``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from math import factorial

from scipy.special import gammainc

from .laplace import PseudoFreqLadder

DEFAULT_MU = 20.0


@dataclass(frozen=True)
class CwfCoeffs:
    n: int
    s_lo: float
    s_hi: float
    mu: float
    A1: float
    A2: float
    B: float
    I0: float

    def to_dict(self) -> dict:
        return asdict(self)


def _moments(mu: float, h: float, kmax: int = 3) -> list[float]:
    # m_k = k! / mu^(k+1) * P(k+1, mu h), P the regularized lower incomplete gamma
    return [factorial(k) / mu ** (k + 1) * float(gammainc(k + 1, mu * h)) for k in range(kmax + 1)]


def derive_coeffs(n: int, ladder: PseudoFreqLadder, mu: float = DEFAULT_MU) -> CwfCoeffs:
    if mu <= 0:
        raise ValueError("mu must be positive")
    s_lo, s_hi = ladder.interval(n)
    h = s_hi - s_lo
    S = s_hi
    m0, m1, m2, m3 = _moments(mu, h)
    int_s = S * m0 - m1
    int_s2 = S * S * m0 - 2.0 * S * m1 + m2
    int_sa = S * m1 - m2
    int_s2a = S * S * m1 - 2.0 * S * m2 + m3
    int_sa2 = S * m2 - m3
    A1 = 2.0 * (int_s2 - 2.0 * int_sa) / m0
    A2 = 2.0 * int_s / m0
    B = 2.0 * (int_s2a - int_sa2) / m0
    return CwfCoeffs(n, s_lo, s_hi, mu, A1, A2, B, m0)


def coefficient_table(ladder: PseudoFreqLadder, mu: float = DEFAULT_MU) -> list[CwfCoeffs]:
    return [derive_coeffs(n, ladder, mu) for n in range(1, ladder.N + 1)]
