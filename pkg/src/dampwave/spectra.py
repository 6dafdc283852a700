"""Eigenvalues, resolvent norms and resolvent scans along the imaginary axis.

Resolvent norms are always taken in the bundle's weighted inner product,
computed as plain spectral norms of ``W (z - A) W^{-1}``.  For P-picture
bundles the scanned quantity is ``||(s - P)^{-1}||``, which equals the
weighted norm of ``(is - A_m)^{-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .operators import OperatorBundle

ILL_CONDITIONED = 1e8
NEAR_SINGULAR = 1e-12
SVD_LIMIT = 1500


class NearSingularError(ArithmeticError):
    """Raised when ``z`` is numerically on the spectrum."""


@dataclass(frozen=True)
class BlockSpectrum:
    values: np.ndarray
    vectors: np.ndarray
    cond: float

    @property
    def ill_conditioned(self) -> bool:
        return not math.isfinite(self.cond) or self.cond > ILL_CONDITIONED


@dataclass(frozen=True)
class SpectrumResult:
    tag: str
    blocks: tuple[BlockSpectrum, ...]

    @property
    def values(self) -> np.ndarray:
        """Eigenvalues of the generator (``i P`` in P pictures), all blocks."""
        return np.concatenate([b.values for b in self.blocks])

    @property
    def ill_conditioned(self) -> bool:
        return any(b.ill_conditioned for b in self.blocks)

    @property
    def max_cond(self) -> float:
        return max(b.cond for b in self.blocks)


def _block_eig(G: np.ndarray) -> BlockSpectrum:
    w, V = np.linalg.eig(G)
    V = V / np.linalg.norm(V, axis=0)
    s = np.linalg.svd(V, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    return BlockSpectrum(w, V, cond)


def block_eig(bundle: OperatorBundle, i: int) -> BlockSpectrum:
    """Eigendecomposition of block ``i`` of the weighted generator (cached).

    Identical blocks (e.g. ``ky`` and ``-ky`` on the torus) share one entry.
    """
    cache = bundle.info.setdefault("_eig_cache", {})
    G = bundle.generator_blocks_cached()[i]
    key = G.tobytes()
    if key not in cache:
        cache[key] = _block_eig(G)
    return cache[key]


def spectrum(bundle: OperatorBundle) -> SpectrumResult:
    """Eigendecomposition of the weighted generator, block by block.

    For P pictures the eigenvalues returned are those of ``i P`` so that
    they compare directly with ``A_m``.  Eigenvectors are in weighted
    coordinates with unit columns; ``cond`` is their 2-norm condition number.
    """
    return SpectrumResult(bundle.tag, tuple(block_eig(bundle, i) for i in range(len(bundle.blocks))))


def spectral_abscissa(bundle: OperatorBundle) -> float:
    return float(np.max(spectrum(bundle).values.real))


# ---------------------------------------------------------------- sigma_min


def _sigma_min_svd(M: np.ndarray) -> float:
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def _sigma_min_iterative(M: np.ndarray, tol: float = 1e-10) -> float:
    """Smallest singular value by Lanczos on ``(M^* M)^{-1}`` with an LU solve."""
    lu = sla.lu_factor(M)
    n = M.shape[0]

    def mv(x):
        y = sla.lu_solve(lu, x, trans=2)  # M^{-*} x
        return sla.lu_solve(lu, y, trans=0)  # M^{-1} M^{-*} x

    op = LinearOperator((n, n), matvec=mv, dtype=complex)
    val = eigsh(op, k=1, which="LM", tol=tol, return_eigenvectors=False)[0]
    return 1.0 / math.sqrt(float(val.real))


def sigma_min(M: np.ndarray) -> float:
    if M.shape[0] <= SVD_LIMIT:
        return _sigma_min_svd(M)
    return _sigma_min_iterative(M)


def _generator_scale(bundle: OperatorBundle) -> float:
    return max(1.0, bundle.norm())


def resolvent_norm(bundle: OperatorBundle, z: complex) -> float:
    """Weighted norm of ``(z - G)^{-1}`` with ``G`` the generator.

    For P pictures ``G = i P``; use :func:`p_resolvent_norm` for
    ``(tau - P)^{-1}``.  Raises :class:`NearSingularError` on the spectrum.
    """
    scale = _generator_scale(bundle)
    worst = 0.0
    for G in bundle.generator_blocks():
        s = sigma_min(z * np.eye(G.shape[0]) - G)
        if s < NEAR_SINGULAR * scale:
            raise NearSingularError(f"z = {z} is numerically in the spectrum")
        worst = max(worst, 1.0 / s)
    return worst


def p_resolvent_norm(bundle: OperatorBundle, tau: complex) -> float:
    """``||(tau - P)^{-1}||`` for a P-picture bundle (equals ``||(i tau - iP)^{-1}||``)."""
    if not bundle.is_P:
        raise ValueError("p_resolvent_norm needs a P-picture bundle")
    return resolvent_norm(bundle, 1j * tau)


# --------------------------------------------------------------- scanning


class _BlockEvaluator:
    """Evaluates ``sigma_min(i s - G)`` for one block at many ``s``.

    Blocks up to ``svd_below`` use a dense SVD per point.  Larger blocks are reduced once
    to complex Schur form ``G = Z T Z^*``; then ``sigma_min(i s - T)`` is
    found by Lanczos iteration with triangular solves, which costs
    ``O(n^2)`` per step instead of ``O(n^3)`` per point.
    """

    def __init__(self, G: np.ndarray, method: str = "auto", svd_below: int = 600):
        self.n = G.shape[0]
        if method == "auto":
            method = "svd" if self.n <= svd_below else "schur"
        self.method = method
        self.G = G
        if method == "schur":
            T, _ = sla.schur(G, output="complex")
            self.T = T
            self.eigs = np.diag(T).copy()
            self._v0 = None
        else:
            self.eigs = None

    def sigma(self, s: float) -> float:
        if self.method == "svd":
            return _sigma_min_svd(1j * s * np.eye(self.n) - self.G)
        M = 1j * s * np.eye(self.n) - self.T
        d = np.abs(np.diag(M))
        if d.min() == 0.0:
            return 0.0

        def mv(x):
            y = sla.solve_triangular(M, x, trans="C")
            return sla.solve_triangular(M, y)

        op = LinearOperator((self.n, self.n), matvec=mv, dtype=complex)
        try:
            val, vec = eigsh(op, k=1, which="LM", tol=1e-10, v0=self._v0, ncv=min(self.n, 20))
        except ArpackNoConvergence:
            return _sigma_min_svd(M)
        self._v0 = vec[:, 0]
        return 1.0 / math.sqrt(float(val[0].real))

    def eigenvalues(self) -> np.ndarray:
        if self.eigs is None:
            self.eigs = np.linalg.eigvals(self.G)
        return self.eigs


def _golden_max(f, a: float, b: float, fa_hint: float, rtol: float = 1e-3, max_iter: int = 60):
    """Maximise ``f`` on ``[a, b]`` by golden section; stop when the best
    value changes by less than ``rtol`` relatively."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    best_s, best = (c, fc) if fc >= fd else (d, fd)
    if fa_hint > best:
        best = fa_hint
    n = 2
    for _ in range(max_iter):
        prev = best
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
            cand = (c, fc)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
            cand = (d, fd)
        n += 1
        if cand[1] > best:
            best_s, best = cand
        if abs(best - prev) <= rtol * abs(best) and n > 6:
            break
    return best_s, best, n


@dataclass(frozen=True)
class ResolventScan:
    tag: str
    s: np.ndarray
    values: np.ndarray  # nan where flagged
    flags: np.ndarray  # True = near-singular
    peaks: list = field(default_factory=list)  # (s, value) after refinement
    certified_upper: float = math.inf  # bound on the sup over the scanned interval
    h: float | None = None
    window: tuple | None = None
    n_evals: int = 0

    @property
    def grid_max(self) -> float:
        v = self.values[~self.flags]
        return float(v.max()) if v.size else math.inf

    @property
    def peak_max(self) -> float:
        vals = [p[1] for p in self.peaks] + [self.grid_max]
        return float(max(vals))

    def envelope(self) -> tuple[np.ndarray, np.ndarray]:
        """Monotone envelope ``M(t) = sup_{|r| <= t}`` value over the grid."""
        ok = ~self.flags
        a = np.abs(self.s[ok])
        v = self.values[ok]
        order = np.argsort(a, kind="stable")
        return a[order], np.maximum.accumulate(v[order])


def _interval_upper_bound(s: np.ndarray, sig: np.ndarray) -> float:
    """Certified bound on ``sup 1/sigma_min`` over ``[s_0, s_end]``.

    ``sigma_min(is - G)`` is 1-Lipschitz in ``s``, so between neighbours it
    is at least ``(sigma_j + sigma_{j+1} - (s_{j+1} - s_j)) / 2``.
    """
    if s.size < 2:
        return math.inf
    low = 0.5 * (sig[:-1] + sig[1:] - np.diff(s))
    if np.any(low <= 0):
        return math.inf
    return float(1.0 / low.min())


def scan_imaginary_axis(
    bundle: OperatorBundle, s_grid, refine: bool = False, method: str = "auto", rtol: float = 1e-3
) -> ResolventScan:
    """Resolvent norm ``||(is - G)^{-1}||`` on a sorted grid of ``s``.

    Points where ``sigma_min < 1e-12 ||G||`` are flagged (value ``nan``).
    With ``refine`` each interior local maximum is polished by golden
    section until the peak changes by less than ``rtol`` relatively.
    """
    s = np.asarray(s_grid, dtype=float)
    if np.any(np.diff(s) < 0):
        raise ValueError("scan grid must be sorted")
    evals = [_BlockEvaluator(G, method) for G in bundle.generator_blocks()]
    scale = NEAR_SINGULAR * _generator_scale(bundle)
    sig = np.array([min(e.sigma(v) for e in evals) for v in s])
    n_evals = s.size * len(evals)
    flags = sig < scale
    values = np.where(flags, np.nan, 1.0 / np.where(flags, 1.0, sig))
    peaks = []
    if refine and s.size >= 3:
        def f(x):
            return 1.0 / max(min(e.sigma(x) for e in evals), scale)

        for j in range(1, s.size - 1):
            if flags[j - 1 : j + 2].any():
                continue
            if values[j] >= values[j - 1] and values[j] >= values[j + 1]:
                xs, val, n = _golden_max(f, s[j - 1], s[j + 1], values[j], rtol)
                peaks.append((float(xs), float(max(val, values[j]))))
                n_evals += n * len(evals)
    upper = _interval_upper_bound(s, sig) if not flags.any() else math.inf
    return ResolventScan(bundle.tag, s, values, flags, peaks, upper, n_evals=n_evals)


# ------------------------------------------------------------------- G(h)


@dataclass(frozen=True)
class GResult:
    value: float
    tau: float
    h: float
    eps: float
    grid_points: int
    certified_upper: float
    skipped_bound: float
    blocks_scanned: int
    blocks_skipped: int
    n_evals: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class WindowError(ValueError):
    pass


def G_of_h(
    bundle: OperatorBundle,
    h: float,
    eps: float,
    grid_points: int = 48,
    refine: bool = True,
    n_seeds: int = 8,
    max_blocks: int = 6,
    exhaustive: bool | None = None,
    rtol: float = 1e-3,
) -> GResult:
    """``sup_{tau in [1-eps, 1+eps]} ||(i tau/h - A_m)^{-1}||`` with refinement.

    Works on any of the ``A_m / Atilde_m / P_m`` bundles (their weighted
    resolvent norms coincide).  Within a scanned block the candidates are a
    uniform grid over the window, the imaginary parts of the ``n_seeds``
    least damped eigenvalues near the window, and golden-section refinement
    around the three best candidates.

    Blocks whose frequencies stay at distance ``d > ||B|| + 1`` from the
    window are not scanned: by a Neumann series their resolvent is at most
    ``1/(d - ||B||)``, which is recorded as ``skipped_bound`` and enters
    only the certified upper bound, never the reported value.

    With many blocks (``exhaustive=False``, the default when there are more
    than ``max_blocks`` candidate blocks) only the ``max_blocks`` blocks
    holding the least damped eigenvalues near the window are scanned; the
    certified upper bound is then reported as ``inf``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    s_lo, s_hi = (1.0 - eps) / h, (1.0 + eps) / h
    if s_hi > float(bundle.lam.max()):
        need = math.ceil((1.0 + eps) / h)
        raise WindowError(f"window exceeds the truncation; need max frequency >= {need}")
    margin = bundle.B_norm + 1.0
    s = np.linspace(s_lo, s_hi, grid_points)
    gens = bundle.generator_blocks_cached()
    skipped_bound = 0.0
    n_skipped = 0
    live: dict[bytes, int] = {}
    for i, blk in enumerate(bundle.blocks):
        half = blk.size // 2
        L = bundle.lam[blk.rows[:half]]
        d = float(np.min(np.abs(L - np.clip(L, s_lo, s_hi))))
        if d > margin:
            skipped_bound = max(skipped_bound, 1.0 / (d - bundle.B_norm))
            n_skipped += 1
            continue
        live.setdefault(gens[i].tobytes(), i)
    blocks = list(live.values())
    if exhaustive is None:
        exhaustive = len(blocks) <= max_blocks
    # least damped eigenvalue near the window, per block
    damp = {}
    for i in blocks:
        w = block_eig(bundle, i).values
        near = w[(w.imag >= s_lo - 1.0) & (w.imag <= s_hi + 1.0)]
        damp[i] = float(np.min(np.abs(near.real))) if near.size else math.inf
    if not exhaustive:
        blocks = sorted(blocks, key=lambda i: (damp[i], i))[:max_blocks]
    best_val, best_tau = 0.0, s_lo
    upper = 0.0
    n_evals = 0
    for i in blocks:
        ev = _BlockEvaluator(gens[i])
        sig = np.array([ev.sigma(v) for v in s])
        n_evals += s.size
        upper = max(upper, _interval_upper_bound(s, sig))
        cands = list(zip(s, sig))
        w = block_eig(bundle, i).values
        near = w[(w.imag >= s_lo - 1.0) & (w.imag <= s_hi + 1.0)]
        for z in near[np.argsort(np.abs(near.real))][:n_seeds]:
            x = float(np.clip(z.imag, s_lo, s_hi))
            cands.append((x, ev.sigma(x)))
            n_evals += 1
        cands.sort(key=lambda c: c[1])
        blk_s, blk_best = cands[0][0], 1.0 / max(cands[0][1], 1e-300)
        if refine:
            step = s[1] - s[0] if s.size > 1 else 2 * eps / h
            f = lambda x, ev=ev: 1.0 / max(ev.sigma(x), 1e-300)
            for cs, csig in cands[:3]:
                a, b = max(s_lo, cs - step), min(s_hi, cs + step)
                xs, val, n = _golden_max(f, a, b, 1.0 / max(csig, 1e-300), rtol)
                n_evals += n
                if val > blk_best:
                    blk_s, blk_best = xs, val
        if blk_best > best_val:
            best_val, best_tau = blk_best, blk_s * h
    certified = max(upper, skipped_bound) if exhaustive else math.inf
    return GResult(
        float(best_val), float(best_tau), h, eps, grid_points, float(certified),
        float(skipped_bound), len(blocks), n_skipped, n_evals,
    )
