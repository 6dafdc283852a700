"""Gaussian coherent states and the Ehrenfest-time energy experiment."""

from __future__ import annotations

import math
from collections import OrderedDict
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .damping import DampingProfile, MollifierSpec, mollify
from .estimates import fitted_constant, theorem31_rhs
from .evolution import evolve
from .geometry import TWO_PI, ManifoldModel
from .operators import StateVector, assemble, conjugate
from .smooth import Window
from .spectra import G_of_h


class InfeasibleError(ValueError):
    """The truncation is too small for the requested semiclassical scale."""


@dataclass(frozen=True)
class CoherentState:
    x0: np.ndarray
    xi0: np.ndarray
    h: float
    coeffs: np.ndarray  # normalised, lattice order
    raw_norm: float  # L^2 norm of the projection before renormalising
    grid: int

    @property
    def normalization_residual(self) -> float:
        return abs(self.raw_norm - 1.0)

    def expectation(self, model: ManifoldModel, a) -> float:
        """``<a(h Lambda) v, v>`` for a function ``a`` of one variable."""
        return float(np.sum(np.asarray(a(self.h * model.lam)) * np.abs(self.coeffs) ** 2))


def build_coherent(model: ManifoldModel, x0, xi0, h: float, grid: int | None = None) -> CoherentState:
    """Project ``(pi h)^(-n/4) exp(-|x-x0|^2/2h + i (x-x0).xi0/h)`` onto the modes.

    The Gaussian is periodised by summing the images at distance one period
    in each coordinate and sampled on a uniform grid; a discrete Fourier
    transform gives the coefficients in the orthonormal basis
    ``exp(i k.x) / sqrt(Vol)``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    d = model.dim
    if x0.shape != (d,) or xi0.shape != (d,):
        raise ValueError("centre dimension does not match the manifold")
    if not math.isclose(float(np.linalg.norm(xi0)), 1.0, rel_tol=1e-12):
        raise ValueError("|xi0| must equal 1")
    if not 0.0 < h < 1.0:
        raise ValueError("h must lie in (0, 1)")
    if 1.0 / h > model.K / 2.0:
        raise InfeasibleError(f"h = {h} needs K >= {math.ceil(2.0 / h)} (have {model.K})")
    N = grid or 4 * model.K
    x = TWO_PI * np.arange(N) / N
    shifts = (-TWO_PI, 0.0, TWO_PI)
    factors = []
    for j in range(d):
        acc = np.zeros(N, dtype=complex)
        for s in shifts:
            y = x + s - x0[j]
            acc += np.exp(-(y**2) / (2.0 * h) + 1j * y * xi0[j] / h)
        factors.append(acc * (math.pi * h) ** (-0.25))
    f = factors[0] if d == 1 else np.multiply.outer(factors[0], factors[1])
    F = np.fft.fftn(f) * (TWO_PI / N) ** d / math.sqrt(model.volume)
    idx = np.mod(model.modes, N)
    c = F[tuple(idx.T)] if d == 2 else F[idx[:, 0]]
    raw = float(np.linalg.norm(c))
    return CoherentState(x0, xi0, h, c / raw, raw, N)


def classical_damping_integral(model: ManifoldModel, b: DampingProfile, x0, xi0, t: float, step: float = 0.01) -> float:
    """``int_0^t b(x0 - s xi0) ds`` (backward flow) by composite Simpson."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    if not math.isclose(float(np.linalg.norm(xi0)), 1.0, rel_tol=1e-12):
        raise ValueError("|xi0| must equal 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    n = max(2, int(math.ceil(t / step)))
    n += n % 2
    s = np.linspace(0.0, t, n + 1)
    pts = np.mod(x0[None, :] - s[:, None] * xi0[None, :], TWO_PI)
    return float(simpson(b(pts), x=s))


@dataclass(frozen=True)
class EhrenfestRow:
    h: float
    K: int
    T: float
    eps: float
    ratio: float
    classical_integral: float
    G: float
    G_lower: float
    fitted_constant: float
    window_mass: float
    raw_ratio: float | None = None
    perturbation_gap: float | None = None
    perturbation_bound: float | None = None

    @property
    def prediction_squared(self) -> float:
        """``exp(-2 int b)``."""
        return math.exp(-2.0 * self.classical_integral)

    @property
    def prediction(self) -> float:
        """``exp(-int b)``: the decay of ``||u_+||^2`` under ``Lambda + i B/2``."""
        return math.exp(-self.classical_integral)

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["prediction_squared"] = self.prediction_squared
        out["prediction"] = self.prediction
        return out


@dataclass(frozen=True)
class EhrenfestReport:
    mu: float
    delta: float
    rows: tuple
    params: dict = field(default_factory=dict)

    CSV_COLUMNS = ("h", "T", "r", "classical_exp2", "classical_exp1", "G_measured", "G_lower_implied")

    def table(self) -> list[tuple]:
        return [
            (r.h, r.T, r.ratio, r.prediction_squared, r.prediction, r.G, r.G_lower) for r in self.rows
        ]

    def as_dict(self) -> dict:
        return {"mu": self.mu, "delta": self.delta, "params": self.params, "rows": [r.as_dict() for r in self.rows]}


def default_K(h: float) -> int:
    return int(math.ceil(2.0 / h))


def _window_eps(h: float, eps: float, rho: float) -> float:
    if rho == 0.0:
        return eps
    if not 0.0 < rho < 0.5:
        raise ValueError("the window exponent rho must lie in [0, 1/2)")
    return h**rho


_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 4


def _bundle_and_G(model, b, m, h, e, nu):
    """Mollified profile, ``P_m`` bundle and ``G(h)``, reused across centres."""
    key = (model.kind, model.K, id(b), m, h, e, nu)
    if key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key][1:]
    bh = mollify(b, MollifierSpec(h**nu)) if nu > 0 else b
    P = assemble(model, bh, m, "P_m")
    g = G_of_h(P, h, e)
    _CACHE[key] = (b, bh, P, g)  # holding b keeps its id valid
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return bh, P, g


def ehrenfest_run(
    kind: str,
    b: DampingProfile,
    m: float,
    x0,
    xi0,
    mu: float,
    h: float,
    K: int | None = None,
    eps: float = 0.25,
    rho: float = 0.0,
    nu: float = 0.0,
    delta: float = 0.5,
    remainder_constant: float = 0.0,
    skip_below: float = 1e-16,
) -> EhrenfestRow:
    """One ``h`` of the experiment.

    Data: ``(chi_eps(h Lambda_m) v_h, 0)`` in the ``P_m`` layout, i.e. the
    windowed coherent state placed in the ``u_+`` component.  It is evolved
    to ``T = mu log(1/h)``; ``ratio`` is the energy ratio.  The implied
    bound ``T sqrt((r - C q)/(2 + delta))`` comes from the pointwise
    estimate with optimised weight, ``C = remainder_constant`` and ``q``
    its remainder factor.
    """
    K = K or default_K(h)
    model = ManifoldModel(kind, K)
    e = _window_eps(h, eps, rho)
    if (1.0 + e) / h > float(np.max(model.lam)):
        raise InfeasibleError(f"window exceeds the truncation at h = {h}; need K >= {math.ceil((1 + e) / h) + 1}")
    T = mu * math.log(1.0 / h)
    bh, P, g = _bundle_and_G(model, b, m, h, e, nu)
    v = build_coherent(model, x0, xi0, h)
    win = np.asarray(Window(e)(h * P.lam), dtype=float)
    n = model.n_modes
    U0 = np.concatenate([win * v.coeffs, np.zeros(n, dtype=complex)])
    mass = float(np.vdot(U0, U0).real)
    tr = evolve(P, U0, np.array([0.0, T]), keep_states=False, skip_below=skip_below)
    ratio = float(tr.energy[-1] / tr.energy[0])
    integral = classical_damping_integral(model, bh, x0, xi0, T)
    main, factor, _ = theorem31_rhs("pointwise-opt", g.value, T, h, e, P.B_norm, None, 0.0, delta)
    fit = fitted_constant(ratio, main, factor)
    lower = T * math.sqrt(max(ratio - remainder_constant * factor, 0.0) / (2.0 + delta))
    raw_ratio = gap = bound = None
    if nu > 0:
        # perturbation of the damping: ||e^{itP_2} - e^{itP_1}|| <= t ||b_2 - b_1||_inf
        Praw = assemble(model, b, m, "P_m")
        tr_raw = evolve(Praw, U0, np.array([0.0, T]), keep_states=False, skip_below=skip_below)
        raw_ratio = float(tr_raw.energy[-1] / tr_raw.energy[0])
        gap = abs(math.sqrt(raw_ratio) - math.sqrt(ratio))
        xs = TWO_PI * np.arange(4096) / 4096
        pts = np.stack([xs, np.zeros_like(xs)], axis=1) if model.dim == 2 else xs[:, None]
        sup = float(np.max(np.abs(b(pts) - bh(pts))))
        bound = T * sup
    return EhrenfestRow(h, K, T, e, ratio, integral, g.value, lower, fit, mass, raw_ratio, gap, bound)


def ehrenfest_experiment(
    kind: str,
    b: DampingProfile,
    m: float,
    x0,
    xi0,
    mu: float,
    hs: Sequence[float],
    eps: float = 0.25,
    rho: float = 0.0,
    nu: float = 0.0,
    delta: float = 0.5,
    K: int | None = None,
    executor: Executor | None = None,
) -> EhrenfestReport:
    """Run :func:`ehrenfest_run` over an ``h`` grid; rows are ordered by decreasing ``h``."""
    hs = sorted((float(h) for h in hs), reverse=True)
    kw = dict(eps=eps, rho=rho, nu=nu, delta=delta)
    if executor is None:
        rows = [ehrenfest_run(kind, b, m, x0, xi0, mu, h, K, **kw) for h in hs]
    else:
        futs = [executor.submit(ehrenfest_run, kind, b, m, x0, xi0, mu, h, K, **kw) for h in hs]
        rows = [f.result() for f in futs]
    params = {"kind": kind, "damping": b.family, "m": m, "x0": list(np.atleast_1d(x0)),
              "xi0": list(np.atleast_1d(xi0)), "eps": eps, "rho": rho, "nu": nu}
    return EhrenfestReport(mu, delta, tuple(rows), params)


def picture_ratio(model: ManifoldModel, b: DampingProfile, m: float, U0_P: np.ndarray, T: float) -> tuple[float, float]:
    """Energy ratio computed in the ``P_m`` and in the ``A_m`` picture."""
    out = []
    for tag in ("P_m", "A_m"):
        bundle = assemble(model, b, m, tag)
        U = conjugate(StateVector(U0_P, "P_m", m), model, tag).coeffs
        tr = evolve(bundle, U, np.array([0.0, T]), keep_states=False)
        out.append(float(tr.energy[-1] / tr.energy[0]))
    return out[0], out[1]
