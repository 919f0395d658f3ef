import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import norm

from hilbert_rwm.potentials import CosineTilt, DiagonalQuadratic, UnsupportedPotential, Zero
from hilbert_rwm.spde import (NoInteriorMaximum, ScalingConstants, beta_of_ell, default_dt,
                              euler_path, euler_step, exact_ou_transition,
                              gaussian_tilt_moment, h_of_ell, optimal_ell, ou_rates,
                              z_ell_half_moment)
from hilbert_rwm.spectral import Explicit, PowerLaw

SPEC = PowerLaw(1.0, 1.0)


def test_beta_examples():
    assert beta_of_ell(0.0) == 1.0
    assert abs(beta_of_ell(1.0) - 0.47950) <= 1e-5
    vals = [beta_of_ell(e) for e in np.linspace(0, 12, 200)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert beta_of_ell(40.0) < 1e-100
    for e in np.linspace(0, 8, 33):
        ref = 2 * norm.cdf(-e / math.sqrt(2))
        assert abs(beta_of_ell(e) - ref) <= 1e-12 * ref


def test_scaling_constants():
    sc = ScalingConstants.from_ell(1.3)
    assert sc.beta == beta_of_ell(1.3) and sc.h == 1.3**2 * sc.beta == h_of_ell(1.3)


def test_optimal_ell_against_bisection_oracle():
    sc = optimal_ell()
    c = brentq(lambda c: 2 * norm.cdf(-c) - c * norm.pdf(c), 0.5, 3.0, xtol=1e-14)
    assert abs(sc.ell - c * math.sqrt(2)) <= 1e-6
    assert abs(sc.ell - 1.6836) <= 1e-3
    assert round(sc.beta, 3) == 0.234
    for d in (0.01, -0.01):
        assert h_of_ell(sc.ell) >= h_of_ell(sc.ell + d)


def test_optimal_ell_interval_invariance_and_errors():
    base = optimal_ell().beta
    for iv in ((0.5, 5.0), (1.0, 3.0), (0.01, 30.0)):
        # h is flat at its maximum, so the argmax is only resolvable to ~sqrt(eps)
        assert abs(optimal_ell(iv).beta - base) <= 1e-7
    with pytest.raises(NoInteriorMaximum):
        optimal_ell((0.1, 1.0))
    with pytest.raises(NoInteriorMaximum):
        optimal_ell((2.0, 10.0))


def test_tilt_moment_examples():
    assert gaussian_tilt_moment(0.0, 1.3) == 0.0
    v = math.exp(0.5) * norm.cdf(-1)
    # e^{1/2} Phi(-1) = 0.2615783; the value is cross-checked by quadrature below
    assert abs(gaussian_tilt_moment(1.0, 0.0) - 0.2615783) <= 2e-7
    assert gaussian_tilt_moment(1.0, 0.0) == pytest.approx(v, rel=1e-13)
    assert gaussian_tilt_moment(-1.0, 0.0) == -gaussian_tilt_moment(1.0, 0.0)
    # large b must not overflow
    assert math.isfinite(gaussian_tilt_moment(2.0, 800.0))


def test_tilt_moment_quadrature():
    # independent oracle: numerical integration of z (1 ^ e^{az+b}) phi(z)
    from scipy.integrate import quad
    for a in (-2, -1, -0.1, 0.1, 1, 2):
        for b in (-2, 0, 2):
            f = lambda z: z * min(1.0, math.exp(a * z + b)) * norm.pdf(z)
            kink = -b / a
            val = sum(quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12)[0]
                      for lo, hi in ((-40, kink), (kink, 40)))
            assert gaussian_tilt_moment(a, b) == pytest.approx(val, rel=1e-8, abs=1e-13)


def test_half_moment_examples():
    assert abs(z_ell_half_moment(1.0) - 0.23975) <= 1e-5
    for e in (0.5, 1.0, 1.68, 3.0):
        assert z_ell_half_moment(e) == beta_of_ell(e) / 2
    with pytest.raises(ValueError):
        z_ell_half_moment(0.0)


def test_default_dt():
    assert default_dt(0.5) == 1e-3
    assert default_dt(100.0) == 0.05 / 100.0


def test_euler_h0_unchanged():
    sc = ScalingConstants(1.0, 0.0, 0.0)
    z = np.array([0.3, -1.0, 2.0])
    out = euler_step(z, DiagonalQuadratic(1.0), SPEC, sc, 1e-2, np.random.default_rng(0), 3)
    np.testing.assert_array_equal(out, z)


def test_euler_drift_per_unit_time():
    sc = ScalingConstants.from_ell(1.2)
    z = np.array([0.8])
    for dt in (1e-2, 1e-3, 1e-4):
        drift = (euler_step(z, Zero(), SPEC, sc, dt, None, 1, xi=np.zeros(1)) - z) / dt
        assert drift[0] == pytest.approx(-sc.h * 0.8, rel=1e-9)
        g = np.random.default_rng(1)
        zz = np.full((200_000, 1), 0.8)
        d = (euler_step(zz, Zero(), SPEC, sc, dt, g, 1) - zz)[:, 0]
        se = d.std(ddof=1) / math.sqrt(d.size)
        assert abs(d.mean() - (-sc.h * 0.8 * dt)) <= 4 * se


def test_euler_noise_only_variance():
    sc = ScalingConstants.from_ell(1.0)
    dt = 1e-3
    g = np.random.default_rng(2)
    z = np.zeros((100_000, 4))
    d = euler_step(z, Zero(), SPEC, sc, dt, g, 4, drift=False)
    target = 2 * sc.h * dt * SPEC.sqrt_eigenvalues(4) ** 2
    var = d.var(axis=0, ddof=1)
    assert np.all(np.abs(var - target) <= 4 * target * math.sqrt(2 / (d.shape[0] - 1)))


def test_euler_tail_modes_are_potential_free():
    sc = ScalingConstants.from_ell(1.0)
    z = np.array([1.0, 1.0, 1.0, 1.0])
    out = euler_step(z, DiagonalQuadratic(5.0), SPEC, sc, 0.01, None, 2, xi=np.zeros(4))
    lam2 = SPEC.sqrt_eigenvalues(4) ** 2
    np.testing.assert_allclose(out[:2], 1 - sc.h * 0.01 * (1 + lam2[:2] * 5.0), rtol=1e-14)
    np.testing.assert_allclose(out[2:], 1 - sc.h * 0.01, rtol=1e-14)


def _affine(p, spec, sc, dt):
    """EM one-mode coefficients (m, s): z' = m z + s xi, read off euler_step itself."""
    m = euler_step(np.array([1.0]), p, spec, sc, dt, None, 1, xi=np.zeros(1))[0]
    s = euler_step(np.array([0.0]), p, spec, sc, dt, None, 1, xi=np.ones(1))[0]
    return m, s


def _em_moments(p, spec, sc, dt, T, z0):
    m, s = _affine(p, spec, sc, dt)
    n = int(round(T / dt))
    mean, var = z0, 0.0
    for _ in range(n):
        mean, var = m * mean, m * m * var + s * s
    return mean, var


def test_euler_matches_exact_ou_fine_step():
    # h = 0.5, lambda = 1, a = 1, t = 1, dt = 1e-4
    ell = brentq(lambda e: h_of_ell(e) - 0.5, 0.1, 1.68)
    sc = ScalingConstants.from_ell(ell)
    spec = Explicit((1.0,))
    theta, sig2 = 0.5 * 2, 0.5
    z0 = 1.5
    mean, var = _em_moments(DiagonalQuadratic(1.0), spec, sc, 1e-4, 1.0, z0)
    ex_mean = z0 * math.exp(-theta)
    ex_var = sig2 * (1 - math.exp(-2 * theta))
    assert abs(mean - ex_mean) <= 0.01 * abs(ex_mean)
    assert abs(var - ex_var) <= 0.01 * ex_var
    # and a Monte Carlo run of the integrator itself agrees with the propagated moments
    g = np.random.default_rng(3)
    zT = euler_path(np.full((20_000, 1), z0), DiagonalQuadratic(1.0), spec, sc, 1.0, 1e-3, g, 1)[:, 0]
    m3, v3 = _em_moments(DiagonalQuadratic(1.0), spec, sc, 1e-3, 1.0, z0)
    assert abs(zT.mean() - m3) <= 4 * math.sqrt(v3 / zT.size)
    assert abs(zT.var(ddof=1) - v3) <= 4 * v3 * math.sqrt(2 / zT.size)


def test_euler_weak_order_one_richardson():
    sc = ScalingConstants.from_ell(1.68)
    spec = Explicit((1.0,))
    p = DiagonalQuadratic(1.0)
    theta = sc.h * 2
    ex = 0.5 * (1 - math.exp(-2 * theta))
    errs = [abs(_em_moments(p, spec, sc, dt, 1.0, 0.0)[1] - ex) for dt in (4e-3, 2e-3, 1e-3)]
    assert errs[1] <= errs[0] / 2 * (1 + 1e-3) and errs[2] <= errs[1] / 2 * (1 + 1e-3)
    ratios = [errs[1] / errs[0], errs[2] / errs[1]]
    assert all(0.45 <= r <= 0.51 for r in ratios)


def test_exact_ou_transition():
    sc = ScalingConstants.from_ell(1.0)
    g = np.random.default_rng(4)
    assert exact_ou_transition(0.7, 0.5, 2.0, sc, 0.0, g) == 0.7
    z = exact_ou_transition(np.full(100_000, 3.0), 0.5, 2.0, sc, 200.0, g)
    sig2 = 1 / (0.5**-2 + 2.0)
    assert abs(z.var(ddof=1) - sig2) <= 4 * sig2 * math.sqrt(2 / z.size)
    assert abs(z.mean()) <= 4 * math.sqrt(sig2 / z.size)
    with pytest.raises(ValueError):
        exact_ou_transition(0.0, 1.0, 0.0, sc, -1.0, g)
    with pytest.raises(UnsupportedPotential):
        exact_ou_transition(0.0, 1.0, -1.0, sc, 1.0, g)
    with pytest.raises(UnsupportedPotential):
        ou_rates(CosineTilt((1.0,)), SPEC, sc, 4, 4)


def test_ou_rates_match_formula():
    sc = ScalingConstants.from_ell(1.0)
    theta, sig2 = ou_rates(DiagonalQuadratic(2.0), SPEC, sc, 6, 4)
    lam2 = SPEC.sqrt_eigenvalues(6) ** 2
    a = np.array([2.0] * 4 + [0.0] * 2)
    np.testing.assert_allclose(theta, sc.h * (1 + lam2 * a), rtol=1e-15)
    np.testing.assert_allclose(sig2, lam2 / (1 + lam2 * a), rtol=1e-15)
