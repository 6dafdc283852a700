"""Nonnegative damping profiles, their Galerkin multiplication matrices and
a zero-set preserving mollifier.

A profile is evaluated on points given as an array whose last axis is the
dimension (1 on the circle, 2 on the torus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .geometry import TWO_PI, ManifoldModel, periodic_difference, periodic_distance
from .smooth import _FULL_INTEGRAL, bump, chi, smooth_step

ZERO_LEVEL = 1e-12

# max of d/ds exp(1 - 1/(1 - s^2)) on (-1, 1); used for the bump Lipschitz constant
_s = np.linspace(-0.999999, 0.999999, 200001)
_BUMP_SLOPE = float(np.max(np.abs(np.gradient(np.e * bump(_s), _s))))
_STEP_SLOPE = math.exp(-1.0) / _FULL_INTEGRAL  # max of smooth_step'


def _pts(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points with last axis {dim}")
    return x


@dataclass(frozen=True, eq=False)
class DampingProfile:
    """A damping coefficient ``b >= 0`` with a declared modulus of continuity."""

    family: str
    dim: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    omega: Callable[[Any], Any]
    sup_norm: float
    params: dict = field(default_factory=dict)
    x_only: bool = False
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.evaluator(_pts(x, self.dim)), dtype=float)

    def samples(self, model: ManifoldModel) -> np.ndarray:
        """Values on the quadrature grid, cached per model."""
        if model.dim != self.dim:
            raise ValueError("profile and manifold dimensions differ")
        key = (model.kind, model.K)
        if key not in self._cache:
            vals = self(model.grid())
            vals.setflags(write=False)
            self._cache[key] = vals
        return self._cache[key]

    def samples_x(self, n: int) -> np.ndarray:
        """Values on an ``n``-point grid in ``x`` (at ``y = 0`` on the torus)."""
        x = TWO_PI * np.arange(n) / n
        if self.dim == 1:
            return self(x[:, None])
        return self(np.stack([x, np.zeros_like(x)], axis=1))

    @property
    def is_zero(self) -> bool:
        return self.sup_norm == 0.0


# ---------------------------------------------------------------- families


def constant(c: float, dim: int = 1) -> DampingProfile:
    if c < 0:
        raise ValueError("damping must be nonnegative")
    return DampingProfile(
        "constant",
        dim,
        lambda x: np.full(x.shape[:-1], float(c)),
        lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        float(c),
        {"c": c},
        x_only=dim == 2,
    )


def smooth_bump(
    amp: float = 1.0, center=math.pi, radius: float = 2.5, dim: int = 1, x_only: bool = False
) -> DampingProfile:
    """``amp * exp(1 - 1/(1 - (d/radius)^2))`` with ``d`` the distance to ``center``.

    On the torus with ``x_only`` the distance is measured in ``x`` only, so
    the profile is a smooth band independent of ``y``.
    """
    if amp < 0 or not 0 < radius <= math.pi:
        raise ValueError("need amp >= 0 and 0 < radius <= pi")
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if x_only or dim == 1:
        c = c[:1]

    def ev(x):
        if x_only or dim == 1:
            d = np.abs(periodic_difference(x[..., 0], c[0]))
        else:
            d = periodic_distance(x, np.broadcast_to(c, (dim,)))
        return amp * np.e * bump(d / radius)

    lip = amp * _BUMP_SLOPE / radius
    return DampingProfile(
        "bump",
        dim,
        ev,
        lambda r: np.minimum(lip * np.asarray(r, dtype=float), amp),
        float(amp),
        {"amp": amp, "center": c.tolist(), "radius": radius},
        x_only=x_only,
    )


def strip(
    amp: float = 1.0, left: float = math.pi / 2, right: float = 3 * math.pi / 2, edge: float = 0.5
) -> DampingProfile:
    """Torus profile depending on ``x`` only, supported in ``(left, right)``.

    Equal to ``amp`` on ``[left + edge, right - edge]`` with smooth ramps.
    """
    if not (0 <= left < right <= TWO_PI and 0 < edge <= (right - left) / 2):
        raise ValueError("invalid strip geometry")

    def ev(x):
        s = np.mod(x[..., 0], TWO_PI)
        return amp * smooth_step((s - left) / edge) * smooth_step((right - s) / edge)

    lip = amp * _STEP_SLOPE / edge
    return DampingProfile(
        "strip",
        2,
        ev,
        lambda r: np.minimum(lip * np.asarray(r, dtype=float), amp),
        float(amp),
        {"amp": amp, "left": left, "right": right, "edge": edge},
        x_only=True,
    )


def hoelder(amp: float = 1.0, alpha: float = 0.5, center: float = 0.0, dim: int = 1) -> DampingProfile:
    """``amp * dist(x, gamma)^(2 alpha)`` with ``gamma`` the point ``center``
    on the circle or the closed geodesic ``{x = center}`` on the torus."""
    if amp < 0 or alpha <= 0:
        raise ValueError("need amp >= 0 and alpha > 0")
    beta = 2.0 * alpha

    def ev(x):
        d = np.abs(periodic_difference(x[..., 0], center))
        return amp * d**beta

    if beta <= 1.0:
        def om(r):
            return amp * np.asarray(r, dtype=float) ** beta
    else:
        lip = amp * beta * math.pi ** (beta - 1.0)

        def om(r):
            return np.minimum(lip * np.asarray(r, dtype=float), amp * math.pi**beta)

    return DampingProfile(
        "hoelder",
        dim,
        ev,
        om,
        float(amp * math.pi**beta),
        {"amp": amp, "alpha": alpha, "center": center},
        x_only=dim == 2,
    )


def cosine(mean: float = 1.0, amp: float = 1.0, freq: int = 1, dim: int = 1) -> DampingProfile:
    """``mean + amp cos(freq x)``; band limited with spectrum in ``|j| <= freq``."""
    if mean < abs(amp):
        raise ValueError("cosine profile would be negative")

    def ev(x):
        return mean + amp * np.cos(freq * x[..., 0])

    lip = abs(amp) * freq
    return DampingProfile(
        "cosine",
        dim,
        ev,
        lambda r: np.minimum(lip * np.asarray(r, dtype=float), 2 * abs(amp)),
        float(mean + abs(amp)),
        {"mean": mean, "amp": amp, "freq": freq},
        x_only=dim == 2,
    )


def _periodic_interpolator(values: np.ndarray, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Periodic piecewise (multi)linear interpolation of uniform grid samples."""
    n = values.shape[0]
    h = TWO_PI / n
    if dim == 1:
        xp = h * np.arange(n + 1)
        fp = np.append(values, values[0])

        def ev(x):
            return np.interp(np.mod(x[..., 0], TWO_PI), xp, fp)

        return ev
    axes = (h * np.arange(n + 1), h * np.arange(values.shape[1] + 1))
    padded = np.pad(values, ((0, 1), (0, 1)), mode="wrap")
    interp = RegularGridInterpolator(axes, padded)

    def ev2(x):
        return interp(np.mod(x, TWO_PI))

    return ev2


def table(values, dim: int = 1, omega=None) -> DampingProfile:
    """Profile given by samples on a uniform periodic grid."""
    values = np.asarray(values, dtype=float)
    if values.ndim != dim and not (dim == 2 and values.ndim == 1):
        raise ValueError("table shape does not match the dimension")
    if np.any(values < 0):
        raise ValueError("damping samples must be nonnegative")
    x_only = dim == 2 and values.ndim == 1
    ev1 = _periodic_interpolator(values, 1 if x_only else dim)
    prof = DampingProfile(
        "table", dim, ev1, omega or (lambda r: np.zeros_like(np.asarray(r, float))),
        float(values.max(initial=0.0)), {"n": int(values.shape[0])}, x_only=x_only,
    )
    if omega is None:
        fitted = modulus_fit(prof, seed=0)
        object.__setattr__(prof, "omega", fitted)
    return prof


def from_spec(family: str, params: dict, dim: int) -> DampingProfile:
    """Build a library profile from a family tag and parameter mapping."""
    p = dict(params)
    if family == "constant":
        return constant(p.get("c", 1.0), dim)
    if family == "zero":
        return constant(0.0, dim)
    if family == "bump":
        return smooth_bump(dim=dim, **p)
    if family == "strip":
        if dim != 2:
            raise ValueError("strip damping lives on the torus")
        return strip(**p)
    if family == "hoelder":
        return hoelder(dim=dim, **p)
    if family == "cosine":
        return cosine(dim=dim, **p)
    if family == "table":
        return table(np.asarray(p["values"], dtype=float), dim)
    raise ValueError(f"unknown damping family {family!r}")


# --------------------------------------------------------- Galerkin matrix


ROUNDOFF = 64 * np.finfo(float).eps


def _drop_roundoff(c: np.ndarray) -> np.ndarray:
    """Zero coefficients at FFT round-off level so band-limited profiles stay exactly band limited."""
    c = c.copy()
    c[np.abs(c) <= ROUNDOFF * np.max(np.abs(c), initial=0.0)] = 0.0
    return c


def fourier_coefficients(model: ManifoldModel, b: DampingProfile) -> np.ndarray:
    """Discrete coefficients ``bhat(j)`` on the quadrature grid (FFT ordering)."""
    vals = b.samples(model)
    if np.any(vals < -ZERO_LEVEL * max(1.0, b.sup_norm)):
        raise ValueError("sampled damping is negative")
    return _drop_roundoff(np.fft.fftn(vals) / vals.size)


def tail_mass(model: ManifoldModel, b: DampingProfile) -> float:
    """Relative l2 mass of the grid coefficients outside ``max|j| <= K``."""
    c = np.abs(fourier_coefficients(model, b)) ** 2
    total = c.sum()
    if total == 0:
        return 0.0
    j = np.fft.fftfreq(model.n_quad, 1.0 / model.n_quad)
    mask = np.abs(j) > model.K
    if model.dim == 1:
        outside = c[mask].sum()
    else:
        outside = c.sum() - c[np.ix_(~mask, ~mask)].sum()
    return float(outside / total)


def multiplication_block(model: ManifoldModel, b: DampingProfile) -> np.ndarray:
    """Matrix ``B[k, l] = bhat(k - l)`` over the ``2K+1`` modes of one axis.

    On the circle this is the full multiplication matrix; on the torus it is
    the common diagonal block over ``ky`` for a profile depending on ``x`` only.
    """
    if model.dim == 2 and not b.x_only:
        raise ValueError("block form needs a profile depending on x only")
    vals = b.samples_x(model.n_quad)
    if np.any(vals < -ZERO_LEVEL * max(1.0, b.sup_norm)):
        raise ValueError("sampled damping is negative")
    c = _drop_roundoff(np.fft.fft(vals) / vals.size)
    k = np.arange(-model.K, model.K + 1)
    B = c[np.mod(k[:, None] - k[None, :], model.n_quad)]
    return 0.5 * (B + B.conj().T)


def multiplication_matrix(model: ManifoldModel, b: DampingProfile) -> np.ndarray:
    """Galerkin matrix of multiplication by ``b`` in the retained Fourier modes."""
    if model.dim == 1:
        return multiplication_block(model, b)
    c = fourier_coefficients(model, b)
    k = model.modes
    dx = np.mod(k[:, None, 0] - k[None, :, 0], model.n_quad)
    dy = np.mod(k[:, None, 1] - k[None, :, 1], model.n_quad)
    B = c[dx, dy]
    return 0.5 * (B + B.conj().T)


# ------------------------------------------------------- modulus fitting


@dataclass(frozen=True)
class ModulusTable:
    edges: np.ndarray
    raw: np.ndarray
    envelope: np.ndarray

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(self.edges, r, side="left") - 1, 0, self.envelope.size - 1)
        out = self.envelope[idx]
        return np.where(r <= 0, 0.0, out)


def modulus_fit(b: DampingProfile, n_pairs: int = 20000, n_bins: int = 32, seed: int = 0) -> ModulusTable:
    """Empirical modulus of continuity from random pairs, binned by distance."""
    rng = np.random.default_rng(seed)
    dim = b.dim
    x = rng.uniform(0.0, TWO_PI, (n_pairs, dim))
    # half the pairs are short-range so small distances are populated
    step = rng.normal(size=(n_pairs, dim)) * np.geomspace(1e-3, math.pi, n_pairs)[:, None] / math.sqrt(dim)
    y = np.mod(np.where(np.arange(n_pairs)[:, None] % 2 == 0, x + step, rng.uniform(0.0, TWO_PI, (n_pairs, dim))), TWO_PI)
    d = periodic_distance(x, y)
    diff = np.abs(b(x) - b(y))
    dmax = math.pi * math.sqrt(dim)
    edges = np.linspace(0.0, dmax, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, n_bins - 1)
    raw = np.zeros(n_bins)
    np.maximum.at(raw, idx, diff)
    return ModulusTable(edges, raw, np.maximum.accumulate(raw))


# ---------------------------------------------------------------- mollifier


@dataclass(frozen=True)
class MollifierSpec:
    """Width ``eps`` of the kernel and the level at which ``b`` is cut.

    The cut is ``chi(b / omega(level_scale * eps))``.  With
    ``level_scale = 2`` the zero set of ``b`` is dilated exactly by ``eps``;
    ``level_scale = 1`` is offered for comparison.
    """

    eps: float
    level_scale: float = 2.0
    grid: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.eps < 1.0:
            raise ValueError("mollifier width must lie in (0, 1)")
        if self.level_scale <= 0:
            raise ValueError("level_scale must be positive")


def kernel_weights(eps: float, h: float, dim: int):
    """Discrete kernel on the offsets ``|j h| < eps``, normalised to sum 1.

    Returns ``(offsets, weights, gradient_weights)``; offsets have shape
    ``(n, dim)``; gradient weights are the analytic kernel gradient.
    """
    r = int(math.ceil(eps / h))
    ax = h * np.arange(-r, r + 1)
    if dim == 1:
        off = ax[:, None]
    else:
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        off = np.stack([X.ravel(), Y.ravel()], axis=1)
    rho = np.sqrt(np.sum(off**2, axis=1)) / eps
    keep = rho < 1.0
    off, rho = off[keep], rho[keep]
    w = bump(rho)
    # d/dx exp(-1/(1-rho^2)) = -2 rho / (1-rho^2)^2 * bump * (x / (rho eps^2))
    fac = -2.0 / (1.0 - rho**2) ** 2 * w / eps**2
    gw = fac[:, None] * off
    s = w.sum()
    return off, w / s, gw / s


def marginal_kernel_weights(eps: float, h: float, n_y: int = 200):
    """Planar kernel integrated over ``y``, sampled at offsets ``j h``.

    Convolving an ``x``-only function with the planar kernel equals the
    one-dimensional convolution with this marginal.
    """
    r = int(math.ceil(eps / h))
    j = np.arange(-r, r + 1)
    x = h * j
    keep = np.abs(x) < eps
    j, x = j[keep], x[keep]
    t, wt = np.polynomial.legendre.leggauss(n_y)
    half = np.sqrt(np.maximum(eps**2 - x**2, 0.0))
    y = half[:, None] * t[None, :]
    rho2 = (x[:, None] ** 2 + y**2) / eps**2
    val = bump(np.sqrt(rho2))
    dval = -2.0 / (1.0 - np.minimum(rho2, 1 - 1e-300)) ** 2 * val * x[:, None] / eps**2
    m = half * (val @ wt)
    dm = half * (dval @ wt)
    s = m.sum()
    return j[:, None], m / s, dm / s


def _mask_dilate(positive: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Periodic dilation of a boolean grid by a set of integer offsets."""
    count = _fft_convolve(positive.astype(float), idx, np.ones(len(idx)))
    return count > 0.5


def _fft_convolve(values: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    ker = np.zeros(values.shape)
    ker[tuple(np.mod(idx, values.shape[0]).T)] += w
    return np.real(np.fft.ifftn(np.fft.fftn(values) * np.fft.fftn(ker)))


@dataclass(frozen=True)
class MollifiedData:
    grid_n: int
    values: np.ndarray
    source: np.ndarray
    cut: np.ndarray
    grad_sup: float


def mollify(b: DampingProfile, spec: MollifierSpec) -> DampingProfile:
    """Smooth ``b`` while keeping it zero on an ``eps``-neighbourhood of ``{b = 0}``.

    The truncated function ``g = b (1 - chi(b / omega))`` vanishes where
    ``b`` is small; it is then convolved with a normalised bump of radius
    ``eps`` on a fine periodic grid.  Points whose kernel support misses
    ``{g > 0}`` are set to exactly zero, which removes FFT round-off there.
    """
    one_d = b.dim == 1 or b.x_only
    n = spec.grid or (2**15 if one_d else 2**9)
    h = TWO_PI / n
    if one_d:
        x = h * np.arange(n)
        src = b.samples_x(n)
        grid_dim = 1
    else:
        ax = h * np.arange(n)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        src = b(np.stack([X, Y], axis=-1))
        grid_dim = 2
    level = float(np.asarray(b.omega(spec.level_scale * spec.eps)))
    if level > 0:
        g = src * (1.0 - chi(src / level))
    else:
        g = src.copy()
    if b.dim == 2 and b.x_only:
        idx, w, gx = marginal_kernel_weights(spec.eps, h)
        grads = [gx]
    else:
        off, w, gw = kernel_weights(spec.eps, h, grid_dim)
        idx = np.rint(off / h).astype(int)
        grads = [gw[:, j] for j in range(grid_dim)]
    val = _fft_convolve(g, idx, w)
    support = _mask_dilate(g > 0, idx)
    val = np.where(support, np.maximum(val, 0.0), 0.0)
    gsq = np.zeros_like(val)
    for gwj in grads:
        gsq += np.where(support, _fft_convolve(g, idx, gwj), 0.0) ** 2
    grad_sup = float(np.sqrt(gsq.max(initial=0.0)))
    ev = _periodic_interpolator(val, grid_dim)
    sup = float(val.max(initial=0.0))
    data = MollifiedData(n, val, src, g, grad_sup)
    return DampingProfile(
        "mollified",
        b.dim,
        ev,
        lambda r, L=grad_sup, S=sup: np.minimum(L * np.asarray(r, dtype=float), S),
        sup,
        {"eps": spec.eps, "level_scale": spec.level_scale, "source": b.family},
        x_only=b.x_only,
        meta={"mollified": data},
    )


def zero_set_distance(samples: np.ndarray, sup_norm: float) -> np.ndarray:
    """Periodic distance from each grid node to the sampled zero set.

    The zero set is ``{b <= 1e-12 * ||b||_inf}``.  Returns ``inf`` everywhere
    when the sampled zero set is empty.
    """
    zero = samples <= ZERO_LEVEL * sup_norm
    if not zero.any():
        return np.full(samples.shape, np.inf)
    h = TWO_PI / samples.shape[0]
    reps = (3,) * samples.ndim
    tiled = np.tile(~zero, reps)
    dist = ndimage.distance_transform_edt(tiled, sampling=h)
    sl = tuple(slice(s, 2 * s) for s in samples.shape)
    return dist[sl]


def zero_set_violations(b: DampingProfile, mollified: DampingProfile) -> int:
    """Grid nodes within ``eps`` of ``{b = 0}`` where the mollified profile is nonzero."""
    data: MollifiedData = mollified.meta["mollified"]
    eps = mollified.params["eps"]
    dist = zero_set_distance(data.source, b.sup_norm)
    return int(np.count_nonzero((dist <= eps) & (data.values != 0.0)))
