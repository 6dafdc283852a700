import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampwave import damping as D
from dampwave.geometry import ManifoldModel


def test_constant_matrix_is_scalar() -> None:
    model = ManifoldModel("circle", 8)
    B = D.multiplication_matrix(model, D.constant(0.7))
    assert np.array_equal(B, 0.7 * np.eye(model.n_modes))


def test_cosine_matrix_is_tridiagonal() -> None:
    model = ManifoldModel("circle", 6)
    B = D.multiplication_matrix(model, D.cosine(mean=1.0, amp=0.4))
    n = model.n_modes
    expected = np.eye(n) + 0.2 * (np.eye(n, k=1) + np.eye(n, k=-1))
    assert np.allclose(B, expected, atol=1e-15)
    assert np.count_nonzero(B) == n + 2 * (n - 1)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.3, math.pi), st.floats(0.0, 2 * math.pi))
def test_bump_matrix_hermitian_and_bounded(amp: float, radius: float, center: float) -> None:
    model = ManifoldModel("circle", 12)
    b = D.smooth_bump(amp, center, radius)
    B = D.multiplication_matrix(model, b)
    assert np.allclose(B, B.conj().T)
    w = np.linalg.eigvalsh(B)
    # <B u, u> is a positive-weight grid sum of b |u|^2, so 0 <= B <= sup b
    assert w.min() >= -1e-12 * amp
    assert w.max() <= amp * (1 + 1e-12)


@pytest.mark.parametrize("b, rel", [(D.cosine(1.0, 0.5, 3), 1e-12), (D.smooth_bump(), 1e-4)])
def test_quadratic_form_matches_direct_integral(b, rel) -> None:
    # exact for band-limited profiles; the bump carries grid aliasing of its coefficients
    model = ManifoldModel("circle", 10)
    rng = np.random.default_rng(0)
    u = rng.normal(size=model.n_modes) + 1j * rng.normal(size=model.n_modes)
    B = D.multiplication_matrix(model, b)
    x = np.linspace(0.0, 2 * math.pi, 4001)
    field = np.exp(1j * np.outer(x, model.modes[:, 0])) @ u / math.sqrt(2 * math.pi)
    from scipy.integrate import simpson

    direct = simpson(b(x[:, None]) * np.abs(field) ** 2, x=x)
    assert np.vdot(u, B @ u).real == pytest.approx(direct, rel=rel)


def test_torus_block_matches_full_matrix() -> None:
    model = ManifoldModel("torus2", 4)
    b = D.strip()
    full = D.multiplication_matrix(model, b)
    blk = D.multiplication_block(model, b)
    g = model.ky_groups()[2]
    assert np.allclose(full[np.ix_(g, g)], blk, atol=1e-14)


def test_block_form_requires_x_only() -> None:
    with pytest.raises(ValueError):
        D.multiplication_block(ManifoldModel("torus2", 3), D.smooth_bump(dim=2))


def test_from_spec_families() -> None:
    assert D.from_spec("zero", {}, 1).is_zero
    assert D.from_spec("constant", {"c": 2.0}, 2).sup_norm == 2.0
    assert D.from_spec("strip", {}, 2).x_only
    with pytest.raises(ValueError):
        D.from_spec("strip", {}, 1)
    with pytest.raises(ValueError):
        D.from_spec("nope", {}, 1)


def test_negative_damping_rejected() -> None:
    with pytest.raises(ValueError):
        D.constant(-1.0)
    with pytest.raises(ValueError):
        D.cosine(mean=0.5, amp=1.0)
    with pytest.raises(ValueError):
        D.table([1.0, -0.1, 0.2])


def test_table_profile_interpolates() -> None:
    vals = np.array([0.0, 1.0, 2.0, 1.0])
    b = D.table(vals)
    x = np.array([0.0, math.pi / 4, math.pi / 2, 7 * math.pi / 4])
    assert b(x[:, None]) == pytest.approx([0.0, 0.5, 1.0, 0.5])
    assert b.sup_norm == 2.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 0.9))
def test_hoelder_modulus_bounds_increments(alpha: float) -> None:
    b = D.hoelder(alpha=alpha)
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 2 * math.pi, 200)
    y = rng.uniform(0, 2 * math.pi, 200)
    from dampwave.geometry import periodic_distance

    d = np.array([float(periodic_distance(np.array([a]), np.array([c]))) for a, c in zip(x, y)])
    inc = np.abs(b(x[:, None]) - b(y[:, None]))
    assert np.all(inc <= b.omega(d) * (1 + 1e-9) + 1e-12)


def test_modulus_fit_is_monotone_envelope() -> None:
    tab = D.modulus_fit(D.smooth_bump(), n_pairs=4000, n_bins=16)
    assert np.all(np.diff(tab.envelope) >= 0)
    assert np.all(tab.envelope >= tab.raw)
    assert tab(0.0) == 0.0


def test_mollify_preserves_zero_neighbourhood() -> None:
    b = D.hoelder(alpha=0.5)
    mb = D.mollify(b, D.MollifierSpec(0.1, grid=4096))
    data = mb.meta["mollified"]
    assert D.zero_set_violations(b, mb) == 0
    assert np.all(data.values >= 0)
    # away from the zero set the mollified profile is close to b
    assert np.max(np.abs(data.values - data.source)) <= 3 * float(b.omega(0.2))


def test_mollify_constant_is_identity() -> None:
    mb = D.mollify(D.constant(1.5), D.MollifierSpec(0.2, grid=2048))
    assert mb.meta["mollified"].values == pytest.approx(np.full(2048, 1.5), rel=1e-12)
    assert mb.meta["mollified"].grad_sup == pytest.approx(0.0, abs=1e-9)


def test_mollifier_spec_validation() -> None:
    with pytest.raises(ValueError):
        D.MollifierSpec(0.0)
    with pytest.raises(ValueError):
        D.MollifierSpec(0.1, level_scale=0.0)


def test_kernel_weights_normalised() -> None:
    off, w, gw = D.kernel_weights(0.1, 0.01, 1)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(np.abs(off) < 0.1)
    # gradient of a normalised even kernel integrates to zero
    assert gw.sum() == pytest.approx(0.0, abs=1e-9)
