import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from dampwave import damping as D
from dampwave.geometry import ManifoldModel
from dampwave.operators import (
    FORMULATIONS, StateVector, assemble, conjugate, diagonalization_suite, energy,
    kernel_projector_boldA, plus_basis, weighted_norm,
)
from dampwave.spectra import spectrum

MODEL = ManifoldModel("circle", 8)
BUMP = D.smooth_bump()


def _match_error(z1: np.ndarray, z2: np.ndarray) -> float:
    """Largest distance under the best one-to-one pairing of two spectra."""
    assert z1.shape == z2.shape
    d = np.abs(z1[:, None] - z2[None, :])
    r, c = linear_sum_assignment(d)
    return float(d[r, c].max())


def _random_state(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(size=n) + 1j * rng.normal(size=n)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["A_m", "Atilde_m", "P_m"]), st.sampled_from(["A_m", "Atilde_m", "P_m"]))
def test_conjugation_preserves_weighted_norm(seed: int, frm: str, to: str) -> None:
    m = 1.0
    U = _random_state(2 * MODEL.n_modes, seed)
    a = assemble(MODEL, BUMP, m, frm)
    b = assemble(MODEL, BUMP, m, to)
    V = conjugate(StateVector(U, frm, m), MODEL, to)
    assert weighted_norm(b, V.coeffs) == pytest.approx(weighted_norm(a, U), rel=1e-13)
    back = conjugate(V, MODEL, frm)
    assert np.allclose(back.coeffs, U, rtol=1e-13, atol=1e-13)


def test_conjugation_intertwines_generators() -> None:
    m = 2.0
    U = _random_state(2 * MODEL.n_modes, 3)
    A = assemble(MODEL, BUMP, m, "A_m")
    P = assemble(MODEL, BUMP, m, "P_m")
    lhs = conjugate(StateVector(A.apply(U), "A_m", m), MODEL, "P_m").coeffs
    rhs = 1j * P.apply(conjugate(StateVector(U, "A_m", m), MODEL, "P_m").coeffs)
    assert np.allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("tag", ["A_m", "Atilde_m", "P_m"])
def test_generators_are_dissipative(tag: str) -> None:
    bundle = assemble(MODEL, BUMP, 1.0, tag)
    for G in bundle.generator_blocks():
        H = 0.5 * (G + G.conj().T)
        assert np.linalg.eigvalsh(H).max() <= 1e-12


def test_energy_is_half_weighted_norm() -> None:
    A = assemble(MODEL, BUMP, 1.0, "A_m")
    U = _random_state(A.dim, 0)
    assert energy(A, U) == pytest.approx(0.5 * weighted_norm(A, U) ** 2)


def test_torus_ky_blocks_match_dense_spectrum() -> None:
    model = ManifoldModel("torus2", 3)
    b = D.strip()
    blk = assemble(model, b, 1.0, "A_m")
    dense = assemble(model, b, 1.0, "A_m", blocks="dense")
    assert blk.blocked and not dense.blocked
    assert _match_error(spectrum(blk).values, spectrum(dense).values) <= 1e-10


def test_assemble_rejects_bad_requests() -> None:
    with pytest.raises(ValueError):
        assemble(MODEL, BUMP, 0.0, "A_m")
    with pytest.raises(ValueError):
        assemble(MODEL, BUMP, 1.0, "A_plus")
    with pytest.raises(ValueError):
        assemble(MODEL, BUMP, 1.0, "P_cut")
    with pytest.raises(ValueError):
        assemble(MODEL, BUMP, 1.0, "Q")
    assert "bold_A" in FORMULATIONS


def test_plus_basis_orthonormal() -> None:
    V = plus_basis(5, 2)
    assert np.allclose(V.conj().T @ V, np.eye(9))
    # every column has equal constant-mode entries in both halves
    assert np.allclose(V[2], V[5 + 2])


def test_zero_mass_pictures_share_spectrum() -> None:
    b = D.constant(0.5)
    zs = [spectrum(assemble(MODEL, b, 0.0, tag)).values for tag in ("A_plus", "Atilde_plus", "P_plus")]
    assert _match_error(zs[0], zs[1]) <= 1e-10
    assert _match_error(zs[0], zs[2]) <= 1e-10
    # kernel removed: no eigenvalue at zero
    assert np.min(np.abs(zs[0])) > 1e-3


def test_zero_mass_conjugation_round_trip() -> None:
    n = MODEL.n_modes
    U = _random_state(2 * n - 1, 4)
    A = assemble(MODEL, BUMP, 0.0, "A_plus")
    P = assemble(MODEL, BUMP, 0.0, "P_plus")
    V = conjugate(StateVector(U, "A_plus", 0.0), MODEL, "P_plus")
    assert weighted_norm(P, V.coeffs) == pytest.approx(weighted_norm(A, U), rel=1e-13)
    assert np.allclose(conjugate(V, MODEL, "A_plus").coeffs, U)


def test_kernel_projector_of_bold_A() -> None:
    b = BUMP
    A = assemble(MODEL, b, 0.0, "bold_A").dense()
    Pi = kernel_projector_boldA(MODEL, b)
    assert np.allclose(Pi @ Pi, Pi, atol=1e-12)
    assert np.allclose(A @ Pi, 0.0, atol=1e-12)
    assert np.allclose(Pi @ A, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        kernel_projector_boldA(MODEL, D.constant(0.0))


def test_diagonalization_suite_errors_shrink_with_h() -> None:
    model = ManifoldModel("circle", 32)
    e = [diagonalization_suite(model, BUMP, h).e2(1.0) for h in (1 / 8, 1 / 16)]
    assert e[1] < e[0]
    with pytest.raises(ValueError):
        diagonalization_suite(ManifoldModel("circle", 8), BUMP, 1 / 8)
    assert math.isfinite(diagonalization_suite(model, BUMP, 1 / 8).e1(0.5))
