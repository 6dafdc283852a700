"""Semigroup propagation, energy accounting and spectral filters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.linalg import expm

from .operators import OperatorBundle, StateVector
from .spectra import block_eig

MAX_SNAPSHOTS = 4096


def time_grid(T: float, b_sup: float, omega_max: float | None = None, resolve: float = 0.02) -> np.ndarray:
    """Uniform quadrature grid on ``[0, T]`` with an even number of intervals.

    The base step is ``min(0.1/(1 + ||b||), T/1000)``.  When ``omega_max``
    is given the step is further limited to ``resolve / omega_max`` so the
    dissipation integrand, which oscillates at up to ``2 omega_max``, is
    resolved by Simpson's rule.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    dt = min(0.1 / (1.0 + b_sup), T / 1000.0)
    if omega_max:
        dt = min(dt, resolve / omega_max)
    n = int(math.ceil(T / dt))
    n += n % 2
    return np.linspace(0.0, T, n + 1)


@dataclass(frozen=True)
class EnergyTrace:
    times: np.ndarray
    energy: np.ndarray
    dissipation_rate: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray  # rows are states in the bundle layout
    tag: str
    methods: tuple = field(default=())

    @property
    def cumulative_dissipation(self) -> np.ndarray:
        if self.times.size < 3:
            return np.zeros_like(self.times)
        return cumulative_simpson(self.dissipation_rate, x=self.times, initial=0.0)

    def dissipation_residual(self) -> float:
        """``|E(T) - E(0) + int rate dt| / E(0)`` with composite Simpson."""
        total = simpson(self.dissipation_rate, x=self.times)
        e0 = self.energy[0]
        if e0 == 0:
            return abs(self.energy[-1] + total)
        return abs(self.energy[-1] - e0 + total) / e0

    def max_increase(self) -> float:
        """Largest relative step-to-step energy increase (0 for a contraction)."""
        if self.energy[0] == 0:
            return 0.0
        return float(max(0.0, np.max(np.diff(self.energy), initial=0.0)) / self.energy[0])


class _BlockPropagator:
    """Exact propagator of one weighted generator block.

    Uses the eigendecomposition when it is well conditioned, otherwise
    scaling-and-squaring exponentials of the time steps.
    """

    def __init__(self, bundle: OperatorBundle, i: int, force_expm: bool = False):
        self.G = bundle.generator_blocks_cached()[i]
        eig = block_eig(bundle, i)
        self.method = "expm" if (force_expm or eig.ill_conditioned) else "eig"
        if self.method == "eig":
            self.w = eig.values
            self.V = eig.vectors
            self.lu = None
        self._steps: dict[float, np.ndarray] = {}

    def coefficients(self, u0: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.V, u0)

    def at_times(self, u0: np.ndarray, times: np.ndarray) -> np.ndarray:
        """States (rows) at each time, weighted coordinates."""
        if self.method == "eig":
            c = self.coefficients(u0)
            return (np.exp(np.outer(times, self.w)) * c) @ self.V.T
        out = np.empty((times.size, u0.size), dtype=complex)
        u = u0.astype(complex)
        t_prev = 0.0
        for j, t in enumerate(times):
            dt = float(t - t_prev)
            if dt != 0.0:
                key = round(dt, 14)
                if key not in self._steps:
                    self._steps[key] = expm(dt * self.G)
                u = self._steps[key] @ u
            out[j] = u
            t_prev = t
        return out


def evolve(
    bundle: OperatorBundle,
    U0,
    times,
    keep_states: bool = True,
    force_expm: bool = False,
    skip_below: float = 0.0,
) -> EnergyTrace:
    """Propagate ``U0`` under ``e^{tA}`` (or ``e^{itP}``) at the given times.

    Energies are ``1/2 ||W U(t)||^2`` and the dissipation rate is
    ``<D WU, WU>`` with ``D = -(G + G^*)/2`` the (nonnegative) dissipative
    part of the weighted generator ``G``; for ``A_m`` this is
    ``<B u_1, u_1>``.  Blocks whose share of the initial energy is below
    ``skip_below`` (relative) are not propagated; by contraction their
    contribution stays below that share.
    """
    coeffs = U0.coeffs if isinstance(U0, StateVector) else np.asarray(U0, dtype=complex)
    if coeffs.size != bundle.dim:
        raise ValueError("state length does not match the bundle")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be a nondecreasing grid starting at t >= 0")
    w = bundle.weight()
    Uw = w * coeffs
    total = float(np.vdot(Uw, Uw).real)
    energy = np.zeros(times.size)
    rate = np.zeros(times.size)
    stride = max(1, int(math.ceil(times.size / MAX_SNAPSHOTS)))
    snap_idx = np.arange(0, times.size, stride)
    snaps = np.zeros((snap_idx.size if keep_states else 0, bundle.dim), dtype=complex)
    methods = []
    gens = bundle.generator_blocks_cached()
    for i, blk in enumerate(bundle.blocks):
        u0 = Uw[blk.rows]
        mass = float(np.vdot(u0, u0).real)
        if mass == 0.0 or (total > 0 and mass < skip_below * total):
            continue
        prop = _BlockPropagator(bundle, i, force_expm)
        methods.append(prop.method)
        states = prop.at_times(u0, times)
        energy += 0.5 * np.sum(np.abs(states) ** 2, axis=1)
        G = gens[i]
        D = -0.5 * (G + G.conj().T)
        rate += np.real(np.sum(states.conj() * (states @ D.T), axis=1))
        if keep_states:
            snaps[:, blk.rows] = states[snap_idx] / blk.weight
    return EnergyTrace(times, energy, rate, times[snap_idx] if keep_states else np.array([]), snaps, bundle.tag, tuple(methods))


def propagate(bundle: OperatorBundle, U0, t: float, skip_below: float = 0.0) -> np.ndarray:
    """State at a single time ``t`` in the bundle layout."""
    tr = evolve(bundle, U0, np.array([t]), keep_states=True, skip_below=skip_below)
    return tr.snapshots[0]


def propagator_matrix(bundle: OperatorBundle, t: float) -> np.ndarray:
    """Dense ``W e^{tG} W^{-1}`` (weighted) for small bundles."""
    out = np.zeros((bundle.dim, bundle.dim), dtype=complex)
    for blk, G in zip(bundle.blocks, bundle.generator_blocks_cached()):
        out[np.ix_(blk.rows, blk.rows)] = expm(t * G)
    return out


# ---------------------------------------------------------------- filters


@dataclass(frozen=True)
class SpectralFilter:
    """Functional-calculus multiplier ``f(Lambda_m)``.

    ``rule='both'`` acts on both components (this is ``f(P_m)`` in the P
    picture); ``rule='first'`` keeps only the first component, which in the
    P picture is the one-sided window acting on ``u_+``.
    """

    profile: Callable
    m: float = 1.0
    rule: str = "both"
    check_even: bool = True

    def __post_init__(self) -> None:
        if self.rule not in ("both", "first"):
            raise ValueError("rule must be 'both' or 'first'")
        if self.check_even:
            s = np.linspace(0.0, 50.0, 101)
            if not np.allclose(self.profile(s), self.profile(-s), rtol=1e-12, atol=1e-14):
                raise ValueError("filter profile must be even")

    def diagonal(self, bundle: OperatorBundle) -> np.ndarray:
        n = bundle.model.n_modes
        if bundle.tag in ("A_plus", "Atilde_plus", "P_plus"):
            raise ValueError("filters act on the full-length layouts")
        f = np.asarray(self.profile(bundle.lam), dtype=float)
        second = f if self.rule == "both" else np.zeros(n)
        return np.concatenate([f, second])


def apply_filter(filt: SpectralFilter, state, bundle: OperatorBundle):
    coeffs = state.coeffs if isinstance(state, StateVector) else np.asarray(state, dtype=complex)
    out = filt.diagonal(bundle) * coeffs
    if isinstance(state, StateVector):
        return StateVector(out, state.tag, state.m)
    return out


# ------------------------------------------------------- perturbation bounds


@dataclass(frozen=True)
class GapReport:
    value: float
    bound: float
    t: float

    @property
    def ok(self) -> bool:
        return self.value <= self.bound * (1.0 + 1e-9) + 1e-13


def semigroup_perturbation_gap(P1: OperatorBundle, P2: OperatorBundle, t: float) -> GapReport:
    """``||e^{itP_2} - e^{itP_1}||`` against ``t ||Q_2 - Q_1||``."""
    if not (P1.is_P and P2.is_P) or len(P1.blocks) != len(P2.blocks):
        raise ValueError("need two P-picture bundles with matching layout")
    gap = bound = 0.0
    for b1, b2 in zip(P1.blocks, P2.blocks):
        if not np.array_equal(b1.rows, b2.rows):
            raise ValueError("block layouts differ")
        D = expm(1j * t * b2.matrix) - expm(1j * t * b1.matrix)
        gap = max(gap, float(np.linalg.norm(D, 2)))
        bound = max(bound, t * float(np.linalg.norm(b2.matrix - b1.matrix, 2)))
    return GapReport(gap, bound, t)


def commutator_growth(bundle: OperatorBundle, A: np.ndarray, t: float) -> GapReport:
    """``||e^{itP} A - A e^{itP}||`` against ``t ||[P, A]||`` (contraction case)."""
    if not bundle.is_P:
        raise ValueError("commutator growth is measured in the P picture")
    P = bundle.dense()
    E = expm(1j * t * P)
    val = float(np.linalg.norm(E @ A - A @ E, 2))
    bound = t * float(np.linalg.norm(P @ A - A @ P, 2))
    return GapReport(val, bound, t)
