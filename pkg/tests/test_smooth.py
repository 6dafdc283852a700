import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampwave.smooth import DyadicPair, Window, band, bump, chi, plateau, smooth_step


def test_bump_support_and_peak() -> None:
    s = np.array([-1.5, -1.0, 0.0, 1.0, 2.0])
    v = bump(s)
    assert v[0] == 0.0 and v[1] == 0.0 and v[3] == 0.0 and v[4] == 0.0
    assert v[2] == pytest.approx(np.exp(-1.0))


def test_smooth_step_endpoints_and_symmetry() -> None:
    assert smooth_step(-0.3) == 0.0
    assert smooth_step(0.0) == 0.0
    assert smooth_step(1.0) == 1.0
    assert smooth_step(0.5) == pytest.approx(0.5, abs=1e-14)
    t = np.linspace(0.0, 1.0, 41)
    assert np.allclose(smooth_step(t) + smooth_step(1.0 - t), 1.0, atol=1e-13)


@given(st.floats(-2.0, 3.0), st.floats(-2.0, 3.0))
def test_smooth_step_is_monotone(a: float, b: float) -> None:
    lo, hi = min(a, b), max(a, b)
    assert smooth_step(lo) <= smooth_step(hi) + 1e-15


def test_chi_plateau_and_support() -> None:
    assert chi(np.array([0.0, 0.7, -1.0])) == pytest.approx([1.0, 1.0, 1.0])
    assert chi(np.array([2.0, -2.5, 10.0])) == pytest.approx([0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        plateau(0.0, 2.0, 1.0)


def test_band_is_one_inside_and_zero_outside() -> None:
    s = np.array([0.4, 0.6, 1.0, 1.9, 2.1])
    v = band(s, 0.5, 0.6, 1.9, 2.0)
    assert v == pytest.approx([0.0, 1.0, 1.0, 1.0, 0.0])


@settings(max_examples=50)
@given(st.floats(0.05, 0.95), st.floats(0.0, 0.9), st.floats(-3.0, 3.0))
def test_window_support(eps: float, flat: float, s: float) -> None:
    w = Window(eps, flat)
    val = float(w(s))
    assert 0.0 <= val <= 1.0
    if abs(abs(s) - 1.0) >= eps:
        assert val == 0.0
    if abs(abs(s) - 1.0) <= flat * eps:
        assert val == pytest.approx(1.0)


def test_window_rejects_bad_width() -> None:
    with pytest.raises(ValueError):
        Window(1.5)


def test_dyadic_pair_support_and_partition() -> None:
    pair = DyadicPair()
    s = np.linspace(0.0, 5.0, 2001)
    phi = pair.phi(s)
    assert np.all(phi[s < pair.a] == 0.0)
    assert np.all(phi[s > 2 * pair.b] == 0.0)
    # phi_tilde = 1 on supp phi
    assert np.all(pair.phi_tilde(s[phi > 0]) == pytest.approx(1.0))
    # telescoping sum of dyadic pieces equals 1 away from the origin
    x = np.linspace(1.0, 20.0, 50)
    total = pair.cutoff(x) + sum(pair.phi(x / 2.0**k) for k in range(0, 8))
    assert total == pytest.approx(np.ones_like(x))
