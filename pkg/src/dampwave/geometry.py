"""Spectral models of the circle and the flat two-torus.

Both manifolds carry the flat metric with period ``2*pi`` in each
coordinate.  The Laplacian eigenbasis is the Fourier basis
``e_k(x) = exp(i k.x) / sqrt(Vol)`` and ``sqrt(-Delta) e_k = |k| e_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap(x):
    """Reduce coordinates to ``[0, 2*pi)``."""
    return np.mod(x, TWO_PI)


def periodic_difference(x, y):
    """Signed difference ``x - y`` reduced to ``[-pi, pi)``."""
    return np.mod(np.asarray(x) - np.asarray(y) + math.pi, TWO_PI) - math.pi


def periodic_distance(x, y):
    """Flat distance between points given as arrays with last axis = dimension."""
    d = periodic_difference(x, y)
    d = np.atleast_1d(d)
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclass(frozen=True)
class ManifoldModel:
    """Fourier truncation of the circle (``kind='circle'``) or torus (``'torus2'``).

    Modes are kept when ``max|k_i| <= K``.  Internally modes are stored in
    lattice order: on the torus the index of ``(kx, ky)`` is
    ``(kx + K)(2K + 1) + (ky + K)``.
    """

    kind: str
    K: int

    def __post_init__(self) -> None:
        if self.kind not in ("circle", "torus2"):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("cutoff K must be a positive integer")

    @property
    def dim(self) -> int:
        return 1 if self.kind == "circle" else 2

    @property
    def side(self) -> int:
        return 2 * self.K + 1

    @property
    def n_modes(self) -> int:
        return self.side**self.dim

    @property
    def n_quad(self) -> int:
        """Quadrature points per dimension; 4K+1 makes mode triple products alias free."""
        return 4 * self.K + 1

    @property
    def volume(self) -> float:
        return TWO_PI**self.dim

    @cached_property
    def modes(self) -> np.ndarray:
        r = np.arange(-self.K, self.K + 1)
        if self.dim == 1:
            return r.reshape(-1, 1)
        kx, ky = np.meshgrid(r, r, indexing="ij")
        return np.stack([kx.ravel(), ky.ravel()], axis=1)

    @cached_property
    def lam(self) -> np.ndarray:
        """Eigenvalues of sqrt(-Delta) in lattice order."""
        return np.sqrt(np.sum(self.modes.astype(float) ** 2, axis=1))

    def lam_m(self, m: float) -> np.ndarray:
        return np.sqrt(self.lam**2 + m)

    @property
    def zero_index(self) -> int:
        return self.n_modes // 2

    def mode_index(self, k) -> int:
        k = np.atleast_1d(np.asarray(k, dtype=int))
        if k.shape != (self.dim,) or np.any(np.abs(k) > self.K):
            raise ValueError(f"mode {k.tolist()} is not retained")
        if self.dim == 1:
            return int(k[0] + self.K)
        return int((k[0] + self.K) * self.side + (k[1] + self.K))

    def grid(self) -> np.ndarray:
        """Quadrature nodes with shape ``(n_quad, ..., dim)``."""
        x = TWO_PI * np.arange(self.n_quad) / self.n_quad
        if self.dim == 1:
            return x.reshape(-1, 1)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def ky_groups(self) -> list[np.ndarray]:
        """Mode indices grouped by ``ky`` (torus only), each in increasing ``kx``."""
        if self.dim != 2:
            raise ValueError("ky groups only exist on the torus")
        idx = np.arange(self.n_modes).reshape(self.side, self.side)
        return [idx[:, j].copy() for j in range(self.side)]


def eigendata(model: ManifoldModel) -> list[tuple[tuple[int, ...], float]]:
    """Retained spectrum of sqrt(-Delta): ``(mode, lambda)`` sorted by lambda.

    Ties are broken by lexicographic order of the mode.
    """
    entries = [(tuple(int(v) for v in k), float(l)) for k, l in zip(model.modes, model.lam)]
    entries.sort(key=lambda e: (e[1], e[0]))
    return entries


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=float)))
        if self.x.shape != self.xi.shape:
            raise ValueError("position and covector must have the same dimension")


def geodesic_flow(model: ManifoldModel, p: PhasePoint, t: float) -> PhasePoint:
    """Homogeneous (unit-speed) geodesic flow on the flat model."""
    if p.x.shape != (model.dim,):
        raise ValueError("phase point dimension does not match the manifold")
    norm = float(np.linalg.norm(p.xi))
    if norm == 0.0:
        raise ValueError("geodesic flow needs a nonzero covector")
    return PhasePoint(wrap(p.x + t * p.xi / norm), p.xi.copy())


@dataclass(frozen=True)
class GCCVerdict:
    passed: bool
    T: float
    n_x: int
    n_theta: int
    dt: float
    witness: PhasePoint | None = None
    note: str = field(
        default="sampled check on a finite horizon; grazing orbits may be missed, not a proof"
    )


def _directions(model: ManifoldModel, n_theta: int) -> np.ndarray:
    if model.dim == 1:
        return np.array([[1.0], [-1.0]])
    th = TWO_PI * np.arange(n_theta) / n_theta
    d = np.stack([np.cos(th), np.sin(th)], axis=1)
    d[np.abs(d) < 1e-15] = 0.0
    return d


def _positions(model: ManifoldModel, n_x: int) -> np.ndarray:
    x = TWO_PI * np.arange(n_x) / n_x
    if model.dim == 1:
        return x.reshape(-1, 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def _first_hits(indicator, pos, direction, times, chunk_points: int = 2_000_000) -> np.ndarray:
    """First sampled hitting time of each orbit (inf when the set is never met)."""
    hit = np.full(pos.shape[0], np.inf)
    live = np.arange(pos.shape[0])
    start, step = 0, 8
    while start < len(times) and live.size:
        step = min(2 * step, max(8, chunk_points // live.size))
        ts = times[start : start + step]
        start += step
        pts = wrap(pos[live, None, :] + ts[None, :, None] * direction)
        inside = np.asarray(indicator(pts.reshape(-1, pos.shape[1])), dtype=bool)
        inside = inside.reshape(live.size, ts.size)
        any_in = inside.any(axis=1)
        hit[live[any_in]] = ts[np.argmax(inside[any_in], axis=1)]
        live = live[~any_in]
    return hit


def gcc_check(
    model: ManifoldModel,
    indicator: Callable[[np.ndarray], np.ndarray],
    T: float,
    n_x: int = 64,
    n_theta: int = 256,
    dt: float | None = None,
) -> GCCVerdict:
    """Sampled geometric-control check.

    ``indicator`` receives points with shape ``(npts, dim)`` and returns a
    boolean array.  Each sampled unit-speed orbit is followed up to time
    ``T``; if some orbit never meets the set, the failing sample whose orbit
    stays outside the longest (followed to ``10 T``) is returned as witness.
    """
    if T <= 0:
        raise ValueError("horizon T must be positive")
    if dt is None:
        dt = min(0.05, T / 100.0)
    times = np.arange(0.0, T + 0.5 * dt, dt)
    pos = _positions(model, n_x)
    failures = []  # (direction order, position index, direction)
    for order, d in enumerate(_directions(model, n_theta)):
        hit = _first_hits(indicator, pos, d, times)
        for i in np.flatnonzero(~np.isfinite(hit)):
            failures.append((order, int(i), d))
    best = None
    if failures:
        # rank failing samples by how long they keep avoiding the set on
        # longer horizons; remaining ties go to the earliest sample
        cand = failures
        for factor in (10.0, 100.0):
            ts = np.arange(0.0, factor * T + 0.5 * dt, dt)
            persist = np.array(
                [_first_hits(indicator, pos[i : i + 1], d, ts)[0] for _, i, d in cand]
            )
            top = persist.max()
            cand = [c for c, p in zip(cand, persist) if p == top]
            if len(cand) == 1:
                break
        _, i, d = cand[0]
        best = (None, pos[i].copy(), d.copy())
    n_theta_used = 2 if model.dim == 1 else n_theta
    if best is None:
        return GCCVerdict(True, T, n_x, n_theta_used, dt)
    return GCCVerdict(False, T, n_x, n_theta_used, dt, PhasePoint(best[1], best[2]))


def expansion_rate(model: ManifoldModel, t_max: float, probes, step: float = 1e-6) -> float:
    """Largest ``log||d phi^t|| / t`` over the probes, by central differences."""
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    d = model.dim
    best = -np.inf
    for p in probes:
        z = np.concatenate([p.x, p.xi])
        J = np.empty((2 * d, 2 * d))
        for j in range(2 * d):
            e = np.zeros(2 * d)
            e[j] = step
            fp = geodesic_flow(model, PhasePoint((z + e)[:d], (z + e)[d:]), t_max)
            fm = geodesic_flow(model, PhasePoint((z - e)[:d], (z - e)[d:]), t_max)
            dx = periodic_difference(fp.x, fm.x)
            J[:, j] = np.concatenate([dx, fp.xi - fm.xi]) / (2.0 * step)
        best = max(best, math.log(np.linalg.norm(J, 2)) / t_max)
    return float(best)


def default_probes(model: ManifoldModel, count: int = 8, seed: int = 0) -> list[PhasePoint]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        x = rng.uniform(0.0, TWO_PI, model.dim)
        xi = rng.normal(size=model.dim)
        out.append(PhasePoint(x, xi / np.linalg.norm(xi)))
    return out
