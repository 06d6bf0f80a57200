import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from roughheat.kernels import kernel_weights, phi1, phi2, weight1, weight2


def quad_w1(lam, h):
    val, _ = quad(lambda u: np.exp(-lam * (h - u)), 0, h, epsabs=0, epsrel=1e-13, limit=200)
    return val / h


def quad_w2(lam, h):
    val, _ = quad(lambda u: np.exp(-lam * (h - u)) * u, 0, h, epsabs=0, epsrel=1e-13, limit=200)
    return val / h**2


def test_weight1_examples():
    assert weight1(0.0, 0.3) == 1.0
    assert weight1(1e-12, 1.0) == pytest.approx(1.0, rel=1e-12)
    assert weight1(1.0, 1.0) == pytest.approx(1 - np.exp(-1), rel=1e-15)
    assert weight1(1.0, 1.0) == pytest.approx(quad_w1(1.0, 1.0), rel=1e-12)
    assert weight1(50.0, 1.0) == pytest.approx(0.02, rel=1e-15)


def test_weight2_examples():
    assert weight2(0.0, 0.3) == 0.5
    assert weight2(1e-12, 1.0) == pytest.approx(0.5, rel=1e-12)
    assert weight2(1.0, 1.0) == pytest.approx(np.exp(-1), rel=1e-14)
    assert weight2(1.0, 1.0) == pytest.approx(quad_w2(1.0, 1.0), rel=1e-12)
    assert weight2(50.0, 1.0) == pytest.approx(0.0196, rel=1e-12)


def test_unit_step_weight():
    # (M / lam) (1 - exp(-lam / M)) is the unnormalized first-order factor for h = 1/M
    M, lam = 1000, np.pi**2 * 37**2
    assert weight1(lam, 1 / M) / M == pytest.approx((1 - np.exp(-lam / M)) / lam, rel=1e-14)


@pytest.mark.parametrize("z", np.logspace(-12, np.log10(0.999e-4), 15))
def test_series_branch_vs_extended_precision(z):
    mpmath.mp.dps = 50
    zm = mpmath.mpf(z)
    exact1 = -mpmath.expm1(-zm) / zm
    exact2 = (zm + mpmath.expm1(-zm)) / zm**2
    assert phi1(z) == pytest.approx(float(exact1), rel=1e-12)
    assert phi2(z) == pytest.approx(float(exact2), rel=1e-12)


def test_branch_continuity():
    lo = np.nextafter(1e-4, 0)
    assert phi1(lo) == pytest.approx(phi1(1e-4), rel=1e-11)
    assert phi2(lo) == pytest.approx(phi2(1e-4), rel=1e-11)


def _lattice():
    rng = np.random.default_rng(0)
    z = np.logspace(-8, 3, 200)
    h = 10 ** rng.uniform(-4, 0, size=200)
    return z / h, h


def test_quadrature_oracle():
    lam, h = _lattice()
    w1 = weight1(lam, h)
    w2 = weight2(lam, h)
    for i in range(lam.size):
        assert w1[i] == pytest.approx(quad_w1(lam[i], h[i]), rel=1e-10)
        assert w2[i] == pytest.approx(quad_w2(lam[i], h[i]), rel=1e-10)


def test_monotone_and_bounded():
    z = np.logspace(-8, 3, 400)
    w1, w2 = phi1(z), phi2(z)
    assert np.all(np.diff(w1) < 0) and np.all(np.diff(w2) < 0)
    assert np.all((w1 > 0) & (w1 <= 1)) and np.all((w2 > 0) & (w2 <= 0.5))
    # the weight exp(-z(1-v)) grows in v, so its mean of v is at least 1/2
    assert np.all(w1 / 2 <= w2 * (1 + 1e-14))
    assert np.all(w2 <= w1)


def test_kernel_table():
    kw = kernel_weights(8, 1 / 64, 3.0)
    lam = (np.pi * np.arange(1, 9)) ** 2
    np.testing.assert_allclose(kw.decay, np.exp(-3.0 * lam / 64), rtol=1e-15)
    np.testing.assert_allclose(kw.w1, weight1(lam, 3.0 / 64), rtol=1e-15)
    np.testing.assert_allclose(kw.w2, weight2(lam, 3.0 / 64), rtol=1e-15)
    assert kw.step == 3.0 / 64 and kw.dim == 8
    assert kernel_weights(8, 1 / 64, 3.0) is kw
    assert kernel_weights(8, 1 / 64, 1.0) is not kw
    with pytest.raises(ValueError):
        kw.w1[0] = 0.0
