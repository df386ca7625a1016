import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qstein.clocks import (
    Deterministic,
    Erlang,
    Exponential,
    HyperExponential,
    LogNormal,
    Uniform,
    balanced_hyperexp,
    clock_from_config,
    clock_to_config,
    substreams,
)

ALL_CLOCKS = [
    Exponential(2.0),
    Erlang(2, 2.0),
    HyperExponential((0.9, 0.1), (3.0, 0.5)),
    Uniform(0.0, 3.0),
    LogNormal(0.0, 0.5),
    Deterministic(2.5),
]


def oracle_abs3(clock):
    """Independent quadrature of E|1 - X/EX|^3 from the density."""
    mu = clock.mean()
    lower = getattr(clock, "a", 0.0)
    upper = getattr(clock, "b", np.inf)
    f = lambda x: abs(1 - x / mu) ** 3 * clock._pdf(np.array([x]))[0]
    lo, _ = integrate.quad(f, lower, mu, epsrel=1e-12, limit=300)
    hi, _ = integrate.quad(f, mu, upper, epsrel=1e-12, epsabs=1e-15, limit=300)
    return lo + hi


class TestMoments:
    def test_exponential_third_moment(self):
        assert Exponential(2.0).moment(3) == pytest.approx(6 / 2**3)

    def test_erlang_mean(self):
        assert Erlang(2, 2.0).moment(1) == pytest.approx(1.0)

    def test_uniform_second_moment(self):
        assert Uniform(0.0, 3.0).moment(2) == pytest.approx(3.0)

    def test_lognormal_moments(self):
        c = LogNormal(0.3, 0.4)
        for m in (1, 2, 3):
            assert c.moment(m) == pytest.approx(math.exp(m * 0.3 + 0.5 * m * m * 0.16))

    def test_hyperexp_mean(self):
        c = HyperExponential((0.9, 0.1), (3.0, 0.5))
        assert c.moment(1) == pytest.approx(0.9 / 3 + 0.1 / 0.5)

    def test_unsupported_order_rejected(self):
        with pytest.raises(ValueError):
            Exponential(1.0).moment(4)
        with pytest.raises(ValueError):
            Erlang(2, 1.0).moment(0)


class TestScv:
    def test_exponential_is_one(self):
        assert Exponential(3.7).scv() == pytest.approx(1.0)

    def test_erlang_is_one_over_k(self):
        assert Erlang(4, 1.3).scv() == pytest.approx(0.25)

    def test_deterministic_is_zero(self):
        assert Deterministic(5.0).scv() == 0.0

    @pytest.mark.parametrize("clock", ALL_CLOCKS, ids=lambda c: c.family)
    def test_matches_moment_identity_exactly(self, clock):
        m1 = clock.moment(1)
        assert clock.scv() == clock.moment(2) / (m1 * m1) - 1.0


class TestAbsCenteredCubed:
    def test_deterministic_is_zero(self):
        assert Deterministic(2.0).abs_centered_cubed() == 0.0

    def test_exponential_closed_form(self):
        # quadrature oracle gave 2.414553294057308 for any rate
        assert Exponential(1.0).abs_centered_cubed() == pytest.approx(2.414553294057308, rel=1e-12)
        assert Exponential(2.7).abs_centered_cubed() == pytest.approx(2.414553294057308, rel=1e-12)

    def test_uniform_0_2(self):
        # symmetric density: 2 * int_0^1 u^3 * (1/2) du = 1/4 (oracle: 0.25)
        assert Uniform(0.0, 2.0).abs_centered_cubed() == pytest.approx(0.25, rel=1e-12)

    def test_uniform_shifted_oracle(self):
        assert Uniform(1.0, 4.0).abs_centered_cubed() == pytest.approx(0.054, rel=1e-9)

    def test_erlang_oracle(self):
        assert Erlang(2, 2.0).abs_centered_cubed() == pytest.approx(0.7180175491295141, rel=1e-7)

    def test_hyperexp_oracle(self):
        c = HyperExponential((0.9, 0.1), (3.0, 0.5))
        assert c.abs_centered_cubed() == pytest.approx(30.52591665235887, rel=1e-7)

    def test_lognormal_oracle(self):
        c = LogNormal(0.0, 0.5)
        assert c.abs_centered_cubed() == pytest.approx(0.3532249102084112, rel=1e-7)

    @pytest.mark.parametrize("clock", ALL_CLOCKS, ids=lambda c: c.family)
    def test_nonnegative_and_zero_iff_deterministic(self, clock):
        v = clock.abs_centered_cubed()
        if clock.family == "deterministic":
            assert v == 0.0
        else:
            assert v > 0.0


class TestSampling:
    def test_deterministic_point_mass(self):
        rng = np.random.default_rng(0)
        assert Deterministic(2.5).sample(rng) == 2.5

    def test_seeded_repeatability(self):
        for clock in ALL_CLOCKS:
            a = clock.sample_many(np.random.default_rng(123), 64)
            b = clock.sample_many(np.random.default_rng(123), 64)
            assert np.array_equal(a, b)

    def test_degenerate_hyperexp_is_exponential(self):
        # p = (1, 0) puts all mass on the rate-3 phase; Monte Carlo mean check
        c = HyperExponential((1.0, 0.0), (3.0, 7.0))
        x = c.sample_many(np.random.default_rng(7), 1_000_000)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 1 / 3) < 3 * se

    @pytest.mark.parametrize("clock", ALL_CLOCKS, ids=lambda c: c.family)
    def test_empirical_moments_match_closed_forms(self, clock):
        x = clock.sample_many(np.random.default_rng(2024), 1_000_000)
        assert np.all(x > 0)
        for m in (1, 2, 3):
            xm = x**m
            se = xm.std(ddof=1) / math.sqrt(x.size)
            assert abs(xm.mean() - clock.moment(m)) <= 4 * se + 1e-12

    def test_substreams_are_independent_and_reproducible(self):
        a1, b1 = substreams(9, 2)
        a2, b2 = substreams(9, 2)
        xa1 = a1.random(8)
        xa2 = a2.random(8)
        assert np.array_equal(xa1, xa2)
        assert not np.array_equal(xa1, b1.random(8))


class TestValidation:
    def test_positive_parameters_required(self):
        with pytest.raises(ValueError):
            Exponential(0.0)
        with pytest.raises(ValueError):
            Erlang(0, 1.0)
        with pytest.raises(ValueError):
            Uniform(2.0, 1.0)
        with pytest.raises(ValueError):
            Deterministic(-1.0)
        with pytest.raises(ValueError):
            LogNormal(0.0, 0.0)

    def test_hyperexp_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError):
            HyperExponential((0.5, 0.4), (1.0, 2.0))


class TestConfig:
    def test_round_trip(self):
        for clock in ALL_CLOCKS:
            assert clock_from_config(clock_to_config(clock)) == clock

    def test_example_grammar(self):
        c = clock_from_config({"family": "erlang", "k": 2, "rate": 2.0})
        assert c == Erlang(2, 2.0)

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ValueError, match=r"model\.arrival\.shape"):
            clock_from_config({"family": "erlang", "shape": 2, "rate": 2.0, "k": 2}, "model.arrival")

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError, match="family"):
            clock_from_config({"family": "weibull", "k": 2.0})


class TestBalancedHyperexp:
    def test_hits_target_mean_and_scv(self):
        c = balanced_hyperexp(1.0, 4.0)
        assert c.moment(1) == pytest.approx(1.0)
        assert c.scv() == pytest.approx(4.0)

    def test_balanced_means(self):
        c = balanced_hyperexp(2.0, 3.0)
        assert c.probs[0] / c.rates[0] == pytest.approx(c.probs[1] / c.rates[1])

    def test_requires_scv_above_one(self):
        with pytest.raises(ValueError):
            balanced_hyperexp(1.0, 0.8)


@given(rate=st.floats(0.1, 50.0))
def test_exponential_scv_property(rate):
    assert Exponential(rate).scv() == pytest.approx(1.0)


@given(k=st.integers(1, 20), rate=st.floats(0.1, 20.0))
def test_erlang_moment_ordering(k, rate):
    c = Erlang(k, rate)
    m1, m2, m3 = c.moment(1), c.moment(2), c.moment(3)
    assert m2 >= m1 * m1
    assert m3 > 0


@settings(max_examples=40, deadline=None)
@given(
    mean=st.floats(0.2, 5.0),
    scv=st.floats(1.05, 10.0),
)
def test_balanced_hyperexp_property(mean, scv):
    c = balanced_hyperexp(mean, scv)
    assert c.moment(1) == pytest.approx(mean, rel=1e-9)
    assert c.scv() == pytest.approx(scv, rel=1e-9)
    assert c.abs_centered_cubed() > 0


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.0, 3.0), width=st.floats(0.1, 5.0))
def test_uniform_abs3_against_quadrature(a, width):
    c = Uniform(a, a + width)
    assert c.abs_centered_cubed() == pytest.approx(oracle_abs3(c), rel=1e-7, abs=1e-12)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scaled_preserves_family_and_scales_moments(c):
    for clock in ALL_CLOCKS:
        s = clock.scaled(c)
        assert s.family == clock.family
        for m in (1, 2, 3):
            assert s.moment(m) == pytest.approx(clock.moment(m) * c**m, rel=1e-12)
