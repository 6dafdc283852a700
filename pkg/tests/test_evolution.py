import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from dampwave import damping as D
from dampwave.geometry import ManifoldModel
from dampwave.evolution import (
    SpectralFilter, apply_filter, commutator_growth, evolve, propagate, propagator_matrix,
    semigroup_perturbation_gap, time_grid,
)
from dampwave.operators import StateVector, assemble, conjugate
from dampwave.smooth import Window

MODEL = ManifoldModel("circle", 8)


def _state(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(size=n) + 1j * rng.normal(size=n)


def test_time_grid_even_intervals() -> None:
    t = time_grid(3.0, 1.0, omega_max=50.0)
    assert t[0] == 0.0 and t[-1] == 3.0
    assert (t.size - 1) % 2 == 0
    assert np.diff(t).max() <= 0.02 / 50.0 + 1e-15
    with pytest.raises(ValueError):
        time_grid(0.0, 1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_energy_nonincreasing_and_identity(seed: int) -> None:
    A = assemble(MODEL, D.smooth_bump(), 1.0, "A_m")
    tr = evolve(A, _state(A.dim, seed), time_grid(4.0, 1.0, omega_max=float(A.lam.max())), keep_states=False)
    assert tr.max_increase() <= 1e-12
    assert tr.dissipation_residual() <= 1e-8
    assert np.all(tr.dissipation_rate >= -1e-12)


def test_eig_and_expm_paths_agree() -> None:
    A = assemble(MODEL, D.smooth_bump(), 1.0, "A_m")
    U = _state(A.dim, 1)
    t = np.linspace(0.0, 2.0, 9)
    a = evolve(A, U, t).snapshots
    b = evolve(A, U, t, force_expm=True).snapshots
    assert np.allclose(a, b, atol=1e-10)


def test_propagate_matches_dense_expm() -> None:
    A = assemble(MODEL, D.smooth_bump(), 1.0, "A_m")
    U = _state(A.dim, 2)
    ref = expm(1.3 * A.dense()) @ U
    assert np.allclose(propagate(A, U, 1.3), ref, atol=1e-10)


def test_pictures_give_equal_energies() -> None:
    b = D.smooth_bump()
    A = assemble(MODEL, b, 1.0, "A_m")
    P = assemble(MODEL, b, 1.0, "P_m")
    U = _state(A.dim, 3)
    V = conjugate(StateVector(U, "A_m", 1.0), MODEL, "P_m").coeffs
    t = np.linspace(0.0, 3.0, 7)
    assert evolve(A, U, t).energy == pytest.approx(evolve(P, V, t).energy, rel=1e-10)


def test_propagator_is_contraction() -> None:
    A = assemble(MODEL, D.smooth_bump(), 1.0, "A_m")
    assert np.linalg.norm(propagator_matrix(A, 2.0), 2) <= 1.0 + 1e-12


def test_evolve_validates_input() -> None:
    A = assemble(MODEL, D.constant(1.0), 1.0, "A_m")
    with pytest.raises(ValueError):
        evolve(A, np.zeros(3), [0.0, 1.0])
    with pytest.raises(ValueError):
        evolve(A, np.zeros(A.dim), [1.0, 0.0])


def test_filter_rules() -> None:
    P = assemble(MODEL, D.constant(1.0), 1.0, "P_m")
    win = Window(0.25)
    both = SpectralFilter(win)
    first = SpectralFilter(win, rule="first")
    U = np.ones(P.dim, dtype=complex)
    n = MODEL.n_modes
    assert np.allclose(apply_filter(both, U, P)[:n], apply_filter(both, U, P)[n:])
    assert np.all(apply_filter(first, U, P)[n:] == 0)
    with pytest.raises(ValueError):
        SpectralFilter(lambda s: s)


def test_perturbation_gap_within_duhamel_bound() -> None:
    P1 = assemble(MODEL, D.smooth_bump(), 1.0, "P_m")
    P2 = assemble(MODEL, D.smooth_bump(amp=1.3), 1.0, "P_m")
    rep = semigroup_perturbation_gap(P1, P2, 1.5)
    assert rep.ok
    assert rep.value > 0


def test_commutator_growth_bound() -> None:
    P = assemble(MODEL, D.smooth_bump(), 1.0, "P_m")
    A = np.diag(np.concatenate([MODEL.lam_m(1.0), -MODEL.lam_m(1.0)])).astype(complex)
    assert commutator_growth(P, A, 0.7).ok
