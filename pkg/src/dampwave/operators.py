"""Truncated first-order formulations of the damped Klein-Gordon equation.

For ``m > 0`` three equivalent pictures are assembled on the retained
Fourier modes:

* ``A_m = [[0, I], [-Lambda^2, -B]]`` on ``H^1_m x L^2``;
* ``Atilde_m = [[0, Lambda], [-Lambda, -B]]`` on ``L^2 x L^2``;
* ``P_m = Lambda diag(1, -1) + i (B/2) [[1, 1], [1, 1]]`` on ``L^2 x L^2``.

They are linked by ``Atilde_m = L A_m L^{-1}`` with ``L = diag(Lambda, I)``
and ``i P_m = Sigma Atilde_m Sigma^{-1}`` with the unitary
``Sigma = (1/sqrt 2) [[1, -i], [-1, -i]]``.

For ``m = 0`` the constant mode must be split off; the ``*_plus`` variants
act on the complement of the kernel and ``bold_A`` keeps the full energy
space.  ``P_cut`` and ``P_diag`` are the semiclassically cut and
diagonalised versions of ``P_m`` around frequency ``1/h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .damping import DampingProfile, multiplication_block, multiplication_matrix, tail_mass
from .geometry import ManifoldModel

M_FAMILY = ("A_m", "Atilde_m", "P_m")
ZERO_FAMILY = ("A_plus", "Atilde_plus", "P_plus", "bold_A")
CUT_FAMILY = ("P_cut", "P_diag")
FORMULATIONS = M_FAMILY + ZERO_FAMILY + CUT_FAMILY
P_PICTURE = ("P_m", "P_plus", "P_cut", "P_diag")

SIGMA2 = np.array([[1.0, -1.0j], [-1.0, -1.0j]]) / math.sqrt(2.0)


@dataclass(frozen=True)
class Block:
    """One diagonal block: the matrix, its diagonal weight and its global rows."""

    matrix: np.ndarray
    weight: np.ndarray
    rows: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def weighted(self) -> np.ndarray:
        """``W M W^{-1}``: plain spectral norms of this equal weighted norms."""
        w = self.weight
        return self.matrix * w[:, None] / w[None, :]


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """A truncated operator, stored as a direct sum of blocks.

    ``dim`` is the total state length.  Each block lists the global rows it
    occupies; all blocks together partition ``range(dim)``.
    """

    tag: str
    m: float
    model: ManifoldModel
    blocks: tuple[Block, ...]
    dim: int
    lam: np.ndarray  # Lambda_m per mode (lattice order)
    B_norm: float
    h: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def is_P(self) -> bool:
        return self.tag in P_PICTURE

    @property
    def blocked(self) -> bool:
        return len(self.blocks) > 1

    def weight(self) -> np.ndarray:
        w = np.empty(self.dim)
        for blk in self.blocks:
            w[blk.rows] = blk.weight
        return w

    def dense(self) -> np.ndarray:
        M = np.zeros((self.dim, self.dim), dtype=complex)
        for blk in self.blocks:
            M[np.ix_(blk.rows, blk.rows)] = blk.matrix
        return M

    def generator_blocks(self) -> list[np.ndarray]:
        """Weighted semigroup generators: ``i P`` for P pictures, else the matrix."""
        out = []
        for blk in self.blocks:
            M = blk.weighted()
            out.append(1j * M if self.is_P else M)
        return out

    def generator_blocks_cached(self) -> list[np.ndarray]:
        cache = self.info.setdefault("_gen_cache", [])
        if not cache:
            cache.extend(self.generator_blocks())
        return cache

    def apply(self, U: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim, dtype=complex)
        for blk in self.blocks:
            out[blk.rows] = blk.matrix @ U[blk.rows]
        return out

    def norm(self) -> float:
        return max(float(np.linalg.norm(blk.weighted(), 2)) for blk in self.blocks)


@dataclass(frozen=True)
class StateVector:
    coeffs: np.ndarray
    tag: str
    m: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=complex))


# --------------------------------------------------------------- assembly


def _mode_groups(model: ManifoldModel, b: DampingProfile, blocks: str):
    if blocks not in ("auto", "dense", "ky"):
        raise ValueError("blocks must be 'auto', 'dense' or 'ky'")
    use_ky = model.dim == 2 and b.x_only and blocks in ("auto", "ky")
    if blocks == "ky" and not use_ky:
        raise ValueError("ky blocks need a torus profile depending on x only")
    if use_ky:
        B1 = multiplication_block(model, b)
        return [(g, B1) for g in model.ky_groups()]
    B = multiplication_matrix(model, b)
    return [(np.arange(model.n_modes), B)]


def _m_block(tag: str, L: np.ndarray, B: np.ndarray):
    n = L.size
    I = np.eye(n)
    Z = np.zeros((n, n))
    if tag == "A_m":
        M = np.block([[Z, I], [-np.diag(L**2), -B]])
        w = np.concatenate([L, np.ones(n)])
    elif tag == "Atilde_m":
        M = np.block([[Z, np.diag(L)], [-np.diag(L), -B]])
        w = np.ones(2 * n)
    else:
        Bh = 0.5j * B
        M = np.block([[np.diag(L) + Bh, Bh], [Bh, -np.diag(L) + Bh]])
        w = np.ones(2 * n)
    return M.astype(complex), w


def assemble(
    model: ManifoldModel,
    b: DampingProfile,
    m: float,
    tag: str,
    blocks: str = "auto",
    h: float | None = None,
    cutoff: Callable | None = None,
) -> OperatorBundle:
    """Assemble one formulation on the retained modes.

    Block storage over ``ky`` is used on the torus when ``b`` depends on
    ``x`` only (``blocks='auto'``).  ``P_cut`` and ``P_diag`` need ``h`` and
    the cutoff ``chi0_tilde`` (a function of ``h Lambda``).
    """
    if tag not in FORMULATIONS:
        raise ValueError(f"unknown formulation {tag!r}")
    if m < 0:
        raise ValueError("mass must be nonnegative")
    if tag == "A_m" and m <= 0:
        raise ValueError("A_m needs m > 0; use the m = 0 formulations")
    if tag in ZERO_FAMILY and m != 0:
        raise ValueError(f"{tag} is defined for m = 0 only")
    if tag in ZERO_FAMILY:
        return _assemble_zero(model, b, tag)
    lam = model.lam_m(m)
    groups = _mode_groups(model, b, blocks)
    n = model.n_modes
    out = []
    if tag in CUT_FAMILY:
        if h is None or cutoff is None:
            raise ValueError(f"{tag} needs h and a cutoff")
    for idx, B in groups:
        L = lam[idx]
        rows = np.concatenate([idx, n + idx])
        if tag in CUT_FAMILY:
            M = _cut_block(tag, L, B, h, cutoff)
            w = np.ones(2 * idx.size)
        else:
            M, w = _m_block(tag, L, B)
        out.append(Block(M, w, rows))
    B_norm = max(float(np.linalg.norm(B, 2)) for _, B in groups[:1]) if groups else 0.0
    info = {"tail_mass": tail_mass(model, b), "damping": b.family}
    return OperatorBundle(tag, float(m), model, tuple(out), 2 * n, lam, B_norm, h, info)


def _cut_block(tag, L, B, h, cutoff):
    c = np.asarray(cutoff(h * L), dtype=float)
    n = L.size
    top = np.diag(L * c)
    Qh = 0.5 * (c[:, None] * B * c[None, :])
    if tag == "P_cut":
        M = np.block([[top + 1j * Qh, 1j * Qh], [1j * Qh, -top + 1j * Qh]])
    else:
        Z = np.zeros((n, n))
        M = np.block([[top + 1j * Qh, Z], [Z, -top + 1j * Qh]])
    return M.astype(complex)


# ------------------------------------------------------------- m = 0 forms


def plus_basis(n: int, i0: int) -> np.ndarray:
    """Orthonormal basis (columns) of ``{(u+, u-): Pi_0 u+ = Pi_0 u-}`` in C^{2n}.

    Column order: ``(e_j, 0)`` for ``j != i0``, then ``(0, e_j)`` for
    ``j != i0``, then ``(e_0, e_0)/sqrt 2``.
    """
    keep = np.array([j for j in range(n) if j != i0])
    V = np.zeros((2 * n, 2 * n - 1), dtype=complex)
    for c, j in enumerate(keep):
        V[j, c] = 1.0
        V[n + j, n - 1 + c] = 1.0
    V[i0, -1] = V[n + i0, -1] = 1.0 / math.sqrt(2.0)
    return V


def _assemble_zero(model: ManifoldModel, b: DampingProfile, tag: str) -> OperatorBundle:
    n = model.n_modes
    i0 = model.zero_index
    lam = model.lam.copy()
    B = multiplication_matrix(model, b)
    keep = np.array([j for j in range(n) if j != i0])
    lp = lam[keep]
    S = np.eye(n)[keep]  # restriction to modes != 0, shape (n-1, n)
    if tag == "A_plus":
        M = np.block([[np.zeros((n - 1, n - 1)), S], [-S.T @ np.diag(lp**2), -B]])
        w = np.concatenate([lp, np.ones(n)])
    elif tag == "Atilde_plus":
        M = np.block([[np.zeros((n - 1, n - 1)), S @ np.diag(lam)], [-S.T @ np.diag(lp), -B]])
        w = np.ones(2 * n - 1)
    elif tag == "P_plus":
        P, _ = _m_block("P_m", lam, B)
        V = plus_basis(n, i0)
        M = V.conj().T @ P @ V
        w = np.ones(2 * n - 1)
    else:  # bold_A on H^1 x L^2 with the full H^1 norm
        Z = np.zeros((n, n))
        M = np.block([[Z, np.eye(n)], [-np.diag(lam**2), -B]])
        w = np.concatenate([np.sqrt(1.0 + lam**2), np.ones(n)])
    M = M.astype(complex)
    blk = Block(M, w, np.arange(M.shape[0]))
    info = {"tail_mass": tail_mass(model, b), "damping": b.family, "zero_index": i0}
    return OperatorBundle(tag, 0.0, model, (blk,), M.shape[0], lam, float(np.linalg.norm(B, 2)), None, info)


# ------------------------------------------------------ conjugation maps


def L_matrix(lam: np.ndarray) -> np.ndarray:
    return np.diag(np.concatenate([lam, np.ones(lam.size)])).astype(complex)


def Sigma_matrix(n: int) -> np.ndarray:
    return np.kron(SIGMA2, np.eye(n))


def _to_tilde(U, lam):
    n = lam.size
    return np.concatenate([lam * U[:n], U[n:]])


def _from_tilde(U, lam):
    n = lam.size
    return np.concatenate([U[:n] / lam, U[n:]])


def _sigma(U, n):
    a, c = U[:n], U[n:]
    s = 1.0 / math.sqrt(2.0)
    return np.concatenate([s * (a - 1j * c), s * (-a - 1j * c)])


def _sigma_inv(V, n):
    p, q = V[:n], V[n:]
    s = 1.0 / math.sqrt(2.0)
    return np.concatenate([s * (p - q), s * 1j * (p + q)])


def conjugate(state: StateVector, model: ManifoldModel, to_tag: str) -> StateVector:
    """Move a state between equivalent pictures, preserving weighted norms.

    Supported within ``A_m / Atilde_m / P_m`` (any ``m > 0``) and within
    ``A_plus / Atilde_plus / P_plus``.  A full-length ``m = 0`` state in the
    ``Atilde_m`` layout can be sent into a ``+`` space only if its first
    component has no constant mode.
    """
    n = model.n_modes
    U = state.coeffs
    fam_m = set(M_FAMILY)
    fam_p = {"A_plus", "Atilde_plus", "P_plus"}
    frm, to = state.tag, to_tag
    if frm in fam_m and to in fam_m:
        lam = model.lam_m(state.m)
        if state.m <= 0:
            raise ValueError("the m-family conjugations need m > 0")
        if frm == "A_m":
            T = _to_tilde(U, lam)
        elif frm == "P_m":
            T = _sigma_inv(U, n)
        else:
            T = U
        if to == "A_m":
            out = _from_tilde(T, lam)
        elif to == "P_m":
            out = _sigma(T, n)
        else:
            out = T
        return StateVector(out, to, state.m)
    if to in fam_p and (frm in fam_p or frm in ("Atilde_m", "A_m")):
        i0 = model.zero_index
        keep = np.array([j for j in range(n) if j != i0])
        lam0 = model.lam
        if frm in ("Atilde_m", "A_m"):
            if U.size != 2 * n:
                raise ValueError("state length does not match the layout")
            if abs(U[i0]) > 0:
                raise ValueError("constant mode present in the first component")
            first = U[:n][keep]
            if frm == "Atilde_m":
                first = first / lam0[keep]
            frm, U = "A_plus", np.concatenate([first, U[n:]])
        if frm == "A_plus":
            T = np.concatenate([lam0[keep] * U[: n - 1], U[n - 1 :]])
        elif frm == "P_plus":
            full = plus_basis(n, i0) @ U
            sf = _sigma_inv(full, n)
            T = np.concatenate([sf[:n][keep], sf[n:]])
        else:
            T = U
        if to == "A_plus":
            out = np.concatenate([T[: n - 1] / lam0[keep], T[n - 1 :]])
        elif to == "P_plus":
            emb = np.zeros(2 * n, dtype=complex)
            emb[:n][keep] = T[: n - 1]
            emb[n:] = T[n - 1 :]
            out = plus_basis(n, i0).conj().T @ _sigma(emb, n)
        else:
            out = T
        return StateVector(out, to, 0.0)
    raise ValueError(f"no conjugation from {state.tag} to {to_tag}")


def weighted_norm(bundle: OperatorBundle, U: np.ndarray) -> float:
    return float(np.linalg.norm(bundle.weight() * U))


def energy(bundle: OperatorBundle, U: np.ndarray) -> float:
    """Half the squared norm of the state in the bundle's inner product."""
    return 0.5 * weighted_norm(bundle, U) ** 2


# ----------------------------------------------------- kernel of bold A


def kernel_projector_boldA(model: ManifoldModel, b: DampingProfile) -> np.ndarray:
    """Rank-one projector onto the constants along the invariant complement.

    ``Pi (u0, u1) = ((int b u0 + int u1) / int b) (1, 0)``, written in the
    ``bold_A`` layout.  With the normalised basis ``e_0 = 1/sqrt(Vol)`` the
    row for the constant mode is ``(B[0, :], e_0^T) / B[0, 0]``.
    """
    n = model.n_modes
    i0 = model.zero_index
    B = multiplication_matrix(model, b)
    b00 = B[i0, i0].real
    if b00 <= 1e-14 * max(1.0, b.sup_norm):
        raise ValueError("the damping has zero mean")
    Pi = np.zeros((2 * n, 2 * n), dtype=complex)
    Pi[i0, :n] = B[i0, :] / b00
    Pi[i0, n + i0] = 1.0 / b00
    return Pi


# ---------------------------------------------------- diagonalization


@dataclass(frozen=True, eq=False)
class DiagonalizationSuite:
    h: float
    nu: float
    P: OperatorBundle
    P_cut: OperatorBundle
    P_diag: OperatorBundle
    K: np.ndarray  # corrector, dense, P layout
    chi0: Callable
    chi0_tilde: Callable

    def e1(self, t: float) -> float:
        """``||(e^{itP} - e^{itP_cut}) chi0(h Lambda)||``."""
        from scipy.linalg import expm

        c = np.asarray(self.chi0(self.h * self.P.lam), dtype=float)
        C = np.concatenate([c, c])
        best = 0.0
        for bp, bc in zip(self.P.blocks, self.P_cut.blocks):
            D = (expm(1j * t * bp.matrix) - expm(1j * t * bc.matrix)) * C[bp.rows][None, :]
            best = max(best, float(np.linalg.norm(D, 2)))
        return best

    def e2(self, t: float) -> float:
        """``||e^{itP_cut} - e^{itP_diag}||``."""
        from scipy.linalg import expm

        best = 0.0
        for bc, bd in zip(self.P_cut.blocks, self.P_diag.blocks):
            D = expm(1j * t * bc.matrix) - expm(1j * t * bd.matrix)
            best = max(best, float(np.linalg.norm(D, 2)))
        return best


def default_chi0(s):
    from .smooth import plateau

    return plateau(np.asarray(s, dtype=float) - 1.0, 0.125, 0.25)


def default_chi0_tilde(s):
    from .smooth import plateau

    return plateau(np.asarray(s, dtype=float) - 1.0, 0.3, 0.6)


def diagonalization_suite(
    model: ManifoldModel,
    b: DampingProfile,
    h: float,
    nu: float = 0.0,
    m: float = 1.0,
    chi0: Callable = default_chi0,
    chi0_tilde: Callable = default_chi0_tilde,
) -> DiagonalizationSuite:
    """Cut-off and diagonalised versions of ``P_m`` near frequency ``1/h``.

    With ``nu > 0`` the damping is first mollified at scale ``h^nu``.
    """
    if not 0.0 <= nu < 0.5:
        raise ValueError("nu must lie in [0, 1/2)")
    if 1.6 / h > model.K:
        raise ValueError(f"window exceeds the truncation; need K >= {math.ceil(1.6 / h)}")
    if nu > 0:
        from .damping import MollifierSpec, mollify

        b = mollify(b, MollifierSpec(h**nu))
    P = assemble(model, b, m, "P_m")
    Pc = assemble(model, b, m, "P_cut", h=h, cutoff=chi0_tilde)
    Pd = assemble(model, b, m, "P_diag", h=h, cutoff=chi0_tilde)
    # corrector K = (i/2) [[0, -c Lambda^{-1} Q], [c Lambda^{-1} Q, 0]], Q = c B/2 c
    n = model.n_modes
    K = np.zeros((2 * n, 2 * n), dtype=complex)
    for blk in Pc.blocks:
        idx = blk.rows[: blk.size // 2]
        L = P.lam[idx]
        c = np.asarray(chi0_tilde(h * L), dtype=float)
        Q = blk.matrix[: idx.size, idx.size :].imag  # c B/2 c
        inv = np.divide(c, L, out=np.zeros_like(c), where=c > 0)
        off = inv[:, None] * Q
        K[np.ix_(idx, n + idx)] = -0.5j * off
        K[np.ix_(n + idx, idx)] = 0.5j * off
    return DiagonalizationSuite(h, nu, P, Pc, Pd, K, chi0, chi0_tilde)
