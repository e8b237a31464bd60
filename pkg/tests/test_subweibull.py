import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from opfix.subweibull import (
    SubWeibullParams,
    c_of_theta,
    c_product,
    empirical_knorms,
    gaussian_noise,
    hp_bound,
    k_grid,
    make_noise,
    moment_ratio,
    sample_noise,
    sample_noise_path,
    sw_bounded,
    sw_center,
    sw_power,
    sw_product,
    sw_scale,
    sw_sum,
    sw_vector_norm,
    uniform_noise,
    verify_moment_bound,
    weibull_noise,
    zero_noise,
)

P = SubWeibullParams


def close(p, theta, nu, rel=1e-12):
    return p.theta == pytest.approx(theta, rel=rel, abs=0) and p.nu == pytest.approx(nu, rel=rel)


class TestConstants:
    def test_c_of_theta_examples(self):
        assert c_of_theta(1.0) == pytest.approx(2 * math.e, rel=1e-15)
        assert c_of_theta(0.0) == 1.0
        assert c_of_theta(0.5) == pytest.approx(3.297443, abs=5e-7)

    def test_c_of_theta_continuous_at_zero(self):
        assert c_of_theta(1e-12) == pytest.approx(1.0, abs=1e-10)

    def test_c_product(self):
        assert c_product(1.0, 1.0) == pytest.approx(4.0)
        assert c_product(0.0, 0.7) == pytest.approx(1.0)
        assert c_product(0.5, 1.5) == pytest.approx(2.0**2 / (0.5**0.5 * 1.5**1.5))


class TestHpBound:
    def test_examples(self):
        assert hp_bound(P(1.0, 1.0), 2 / math.e**2) == pytest.approx(4 * math.e, rel=1e-12)
        assert hp_bound(P(0.0, 5.0), 0.37) == 5.0

    def test_against_mpmath(self):
        # independent high-precision evaluation of nu log^theta(2/delta) (2e/theta)^theta
        mpmath.mp.dps = 40
        expect = 2 * mpmath.log(40) ** 0.5 * (2 * mpmath.e / 0.5) ** 0.5
        got = hp_bound(P(0.5, 2.0), 0.05)
        assert got == pytest.approx(float(expect), rel=1e-13)
        assert got == pytest.approx(12.66644, abs=1e-5)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
    def test_domain(self, delta):
        with pytest.raises(ValueError):
            hp_bound(P(0.5, 1.0), delta)

    def test_zero_sentinel(self):
        assert hp_bound(P.zero(), 0.1) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(
        theta=st.floats(0.0, 2.0),
        nu=st.floats(1e-3, 1e3),
        d1=st.floats(1e-6, 0.7),
        d2=st.floats(1e-6, 0.7),
    )
    def test_monotone(self, theta, nu, d1, d2):
        lo, hi = sorted((d1, d2))
        p = P(theta, nu)
        assert hp_bound(p, hi) <= hp_bound(p, lo) * (1 + 1e-12)
        assert hp_bound(P(theta, 2 * nu), lo) >= hp_bound(p, lo)
        assert hp_bound(P(min(theta + 0.1, 2.0), nu), lo) >= hp_bound(p, lo) * (1 - 1e-12)

    @pytest.mark.parametrize(
        "spec",
        [gaussian_noise(1.0), weibull_noise(1.0, 1.0), weibull_noise(2.0, 0.3, 2), uniform_noise(1.0)],
        ids=["gauss", "weib1", "weib2", "unif"],
    )
    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_coverage(self, spec, delta):
        rng = np.random.default_rng(11)
        x = np.linalg.norm(sample_noise_path(spec, 10**5, rng), axis=1)
        assert np.mean(x <= hp_bound(spec.declared, delta)) >= 1 - delta


class TestClosure:
    def test_scale(self):
        assert close(sw_scale(P(0.5, 1), -3), 0.5, 3)
        assert close(sw_scale(P(1, 2), 1), 1, 2)
        assert close(sw_scale(P(2, 0.5), 4), 2, 2)
        assert sw_scale(P(1, 2), 0.0).exact_zero

    def test_sum(self):
        assert close(sw_sum(P(0.5, 1), P(1, 2)), 1, 3)
        assert close(sw_sum(P(0.3, 1.5), P.zero()), 0.3, 1.5)
        assert close(sw_sum(P(1, 1), P(1, 1)), 1, 2)

    def test_product(self):
        assert close(sw_product(P(0.5, 1), P(0.5, 1), True), 1, 1)
        assert close(sw_product(P(1, 2), P(1, 3), False), 2, 24)
        assert close(sw_product(P(0.7, 1.3), P(0, 1), True), 0.7, 1.3)
        assert sw_product(P(1, 1), P.zero(), True).exact_zero

    def test_power(self):
        nu = 1.7
        assert close(sw_power(P(0.5, nu), 2), 1, 2 * nu**2)
        assert close(sw_power(P(0.3, nu), 1), 0.3, nu)
        assert close(sw_power(P(1, 2), 0.5), 0.5, math.sqrt(2))
        with pytest.raises(ValueError):
            sw_power(P(1, 1), 0.0)

    def test_center_bounded_norm(self):
        assert close(sw_center(P(1, 3)), 1, 6)
        assert close(sw_center(P(0.5, 0.5)), 0.5, 1)
        assert sw_center(P.zero()).exact_zero
        assert close(sw_bounded(-1, 1), 0.5, math.sqrt(2))
        assert close(sw_bounded(0, math.sqrt(2)), 0.5, 1)
        assert close(sw_bounded(0, 0.001), 0.5, 0.001 / math.sqrt(2))
        with pytest.raises(ValueError):
            sw_bounded(1, 1)
        assert close(sw_vector_norm(P(0.5, 1), 4), 0.5, 2 * math.sqrt(2))
        assert close(sw_vector_norm(P(0.4, 1.1), 1), 0.4, 2**0.4 * 1.1)
        assert close(sw_vector_norm(P(1, 1), 9), 1, 6)

    @settings(max_examples=300, deadline=None)
    @given(theta=st.floats(0, 5), nu=st.floats(1e-6, 1e6),
           a=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3))
    def test_scale_round_trip(self, theta, nu, a):
        p = P(theta, nu)
        back = sw_scale(sw_scale(p, a), 1 / a)
        assert back.theta == p.theta
        assert back.nu == pytest.approx(p.nu, rel=1e-15, abs=0)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            P(-0.1, 1.0)
        with pytest.raises(ValueError):
            P(0.5, 0.0)

    def test_inclusion(self):
        rng = np.random.default_rng(5)
        spec = weibull_noise(1.0, 1.0)
        x = np.linalg.norm(sample_noise_path(spec, 10**5, rng), axis=1)
        base = moment_ratio(x, spec.declared).max_ratio
        for th, f in [(1.0, 1.5), (1.5, 1.0), (2.0, 3.0)]:
            wider = P(th, spec.declared.nu * f)
            assert spec.declared.covers(wider)
            assert not wider.covers(spec.declared)
            assert moment_ratio(x, wider).max_ratio <= base


class TestSamplers:
    def test_zero(self):
        rng = np.random.default_rng(0)
        assert np.all(sample_noise(zero_noise(3), 3, 0, rng) == 0)
        assert verify_moment_bound(zero_noise(1)).max_ratio == 0.0

    def test_uniform_support(self):
        rng = np.random.default_rng(0)
        x = sample_noise_path(uniform_noise(1.0), 10**4, rng)
        assert np.all(np.abs(x) <= 1.0)
        assert verify_moment_bound(uniform_noise(1.0)).max_ratio <= 1.0

    def test_gaussian_half_normal_mean(self):
        rng = np.random.default_rng(2)
        x = sample_noise_path(gaussian_noise(1.0), 10**6, rng)
        assert abs(np.mean(np.abs(x)) - math.sqrt(2 / math.pi)) <= 0.003

    def test_gaussian_certificate_quadrature(self):
        # max_k ||half-normal||_k / sqrt(k) by numeric quadrature, independent of the library
        def knorm(k):
            val, _ = integrate.quad(lambda z: z**k * math.exp(-z * z / 2), 0, np.inf)
            return (val * math.sqrt(2 / math.pi)) ** (1 / k)

        ratios = [knorm(k) / math.sqrt(k) for k in np.arange(1, 30.5, 0.5)]
        assert max(ratios) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-9)
        assert max(ratios) < 1
        assert gaussian_noise(1.0).declared == P(0.5, 1.0)

    def test_gaussian_verify(self):
        rep = verify_moment_bound(gaussian_noise(1.0), 10**6, 8, np.random.default_rng(3))
        assert rep.max_ratio < 1
        assert rep.worst_k == 1.0

    def test_weibull_certificate_matches_gamma(self):
        spec = weibull_noise(1.0, 2.0)
        # shape 1 = exponential: ||x||_k = scale Gamma(1+k)^(1/k); k=1 gives the max ratio 1
        assert spec.declared.nu == pytest.approx(2.0, rel=1e-5)
        assert spec.mean_norm == pytest.approx(2.0)

    def test_schedule(self):
        spec = gaussian_noise(1.0, 1, "geometric", 0.5)
        assert spec.declared_at(3).nu == pytest.approx(0.125)
        rng = np.random.default_rng(0)
        path = sample_noise_path(spec, 40, rng)
        assert np.all(np.abs(path[30:]) < 1e-6)

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            sample_noise(gaussian_noise(1.0, 2), 3, 0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            make_noise("cauchy", 1)
        with pytest.raises(ValueError):
            verify_moment_bound(gaussian_noise(1.0), num_samples=100)

    def test_empirical_knorms(self):
        x = np.array([1.0, 2.0, 3.0])
        ks = k_grid(3, 1)
        expect = [np.mean(x**k) ** (1 / k) for k in ks]
        assert np.allclose(empirical_knorms(x, ks), expect, rtol=1e-14)

    def test_uniform_ball_moments(self):
        rng = np.random.default_rng(9)
        spec = uniform_noise(0.5, 3)
        r = np.linalg.norm(sample_noise_path(spec, 4 * 10**5, rng), axis=1)
        assert r.max() <= 0.5
        assert np.mean(r) == pytest.approx(spec.mean_norm, rel=5e-3)
        assert np.mean(r**2) == pytest.approx(spec.mean_sq_norm, rel=5e-3)
