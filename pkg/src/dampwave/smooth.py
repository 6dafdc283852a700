"""Smooth bumps, cutoffs and windows used throughout the package.

Every cutoff is derived from the compactly supported bump
``exp(-1/(1-s^2))``.  The monotone transition ``smooth_step`` is the
normalised running integral of that bump, evaluated by fixed-order
Gauss-Legendre quadrature so the result is vectorised and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

_GL_NODES, _GL_WEIGHTS = leggauss(80)


def bump(s):
    """Unnormalised bump ``exp(-1/(1-s^2))`` on (-1, 1), zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _bump01(t):
    # bump rescaled to (0, 1)
    return bump(2.0 * t - 1.0)


def _running_integral(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    x = 0.5 * (_GL_NODES + 1.0)  # nodes on (0, 1)
    vals = _bump01(t[..., None] * x)
    return 0.5 * t * (vals @ _GL_WEIGHTS)


_FULL_INTEGRAL = float(_running_integral(np.array(1.0)))


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, monotone in between."""
    t = np.asarray(t, dtype=float)
    out = _running_integral(t) / _FULL_INTEGRAL
    out = np.where(t <= 0.0, 0.0, out)
    out = np.where(t >= 1.0, 1.0, out)
    return out


def plateau(s, inner: float, outer: float):
    """Even cutoff equal to 1 on ``|s| <= inner`` and 0 on ``|s| >= outer``."""
    if not 0.0 <= inner < outer:
        raise ValueError("need 0 <= inner < outer")
    s = np.abs(np.asarray(s, dtype=float))
    return smooth_step((outer - s) / (outer - inner))


def chi(s):
    """Level cutoff: 1 on [-1, 1], supported in [-2, 2]."""
    return plateau(s, 1.0, 2.0)


def band(s, lo0: float, lo1: float, hi1: float, hi0: float):
    """Cutoff that is 1 on ``[lo1, hi1]`` and vanishes outside ``(lo0, hi0)``.

    Applied to ``|s|`` so the result is even.
    """
    if not (0.0 <= lo0 < lo1 <= hi1 < hi0):
        raise ValueError("need 0 <= lo0 < lo1 <= hi1 < hi0")
    a = np.abs(np.asarray(s, dtype=float))
    return smooth_step((a - lo0) / (lo1 - lo0)) * smooth_step((hi0 - a) / (hi0 - hi1))


@dataclass(frozen=True)
class Window:
    """Semiclassical window ``chi_eps(s) = chi_w((s - 1)/eps)``.

    ``chi_w`` equals 1 on ``|r| <= flat`` and vanishes for ``|r| >= 1``, so
    the window is supported in the open interval ``(1 - eps, 1 + eps)`` and
    equals 1 at ``s = 1``.  Evaluated on ``|s|`` so it is an even profile.
    """

    eps: float
    flat: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.eps < 1.0:
            raise ValueError("window half-width must lie in (0, 1)")
        if not 0.0 <= self.flat < 1.0:
            raise ValueError("flat part must lie in [0, 1)")

    def __call__(self, s):
        r = (np.abs(np.asarray(s, dtype=float)) - 1.0) / self.eps
        return plateau(r, self.flat, 1.0)


@dataclass(frozen=True)
class DyadicPair:
    """Littlewood-Paley style pair ``(phi, phi_tilde)``.

    ``phi(s) = c(s/2) - c(s)`` where ``c`` is 1 on ``[0, a]`` and 0 beyond
    ``b``.  Hence ``supp phi`` lies in ``[a, 2b]``.  ``phi_tilde`` is 1 on
    ``[lo, hi]`` and supported in ``(lo0, hi0)``; the defaults keep it
    inside ``(1/2, 2)``.
    """

    a: float = 0.76
    b: float = 0.8
    lo0: float = 0.5
    lo: float = 0.505
    hi: float = 1.96
    hi0: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 < self.a < self.b:
            raise ValueError("need 0 < a < b")
        if not (self.lo <= self.a and self.hi >= 2.0 * self.b):
            raise ValueError("phi_tilde must equal 1 on supp phi")

    def cutoff(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        return smooth_step((self.b - a) / (self.b - self.a))

    def phi(self, s):
        s = np.asarray(s, dtype=float)
        return self.cutoff(s / 2.0) - self.cutoff(s)

    def phi_tilde(self, s):
        return band(s, self.lo0, self.lo, self.hi, self.hi0)

    def widened(self, lo: float, hi: float) -> "DyadicPair":
        return DyadicPair(self.a, self.b, self.lo0, lo, hi, self.hi0)
