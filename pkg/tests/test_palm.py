import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qstein import GG1, JSQ, Tandem2
from qstein.clocks import Erlang, Exponential
from qstein.engine import simulate
from qstein.palm import (
    EstimateCI,
    EventProbe,
    TimeProbe,
    WindowProbe,
    abs_linear_segments,
    poly_product_segments,
)

MM1_07 = GG1(Exponential(0.7), Exponential(1.0))
MM1_08 = GG1(Exponential(0.8), Exponential(1.0))


def x_total(model):
    if model.kind == "tandem":
        d = np.array(model.delta_vec)
        return lambda q: q @ d
    return lambda q: model.delta * q.sum(axis=1)


def seg_f_of_x(model, f):
    xt = x_total(model)
    return lambda ch: f(xt(ch.q))


def time_probe_fx(model, pid, f):
    sf = seg_f_of_x(model, f)
    return TimeProbe(pid, lambda ch: ch.dt * sf(ch))


class TestSegmentHelpers:
    @settings(max_examples=30, deadline=None)
    @given(
        end=st.floats(0.0, 5.0),
        dt=st.floats(0.01, 4.0),
        p=st.integers(0, 4),
        active=st.booleans(),
    )
    def test_poly_single_factor_matches_quadrature(self, end, dt, p, active):
        a = np.array([active])
        val = poly_product_segments(np.array([dt]), [(np.array([end]), a, p)])[0]
        ref, _ = integrate.quad(lambda s: (end + (s if active else 0.0)) ** p, 0, dt)
        assert val == pytest.approx(ref, rel=1e-10, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(
        e1=st.floats(0.0, 4.0),
        e2=st.floats(0.0, 4.0),
        dt=st.floats(0.01, 3.0),
        p1=st.integers(1, 3),
        p2=st.integers(1, 2),
    )
    def test_poly_product_matches_quadrature(self, e1, e2, dt, p1, p2):
        ones = np.array([True])
        val = poly_product_segments(
            np.array([dt]), [(np.array([e1]), ones, p1), (np.array([e2]), ones, p2)]
        )[0]
        ref, _ = integrate.quad(lambda s: (e1 + s) ** p1 * (e2 + s) ** p2, 0, dt)
        assert val == pytest.approx(ref, rel=1e-10, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(v0=st.floats(-4, 4), v1=st.floats(-4, 4), dt=st.floats(0.01, 3.0))
    def test_abs_linear_matches_quadrature(self, v0, v1, dt):
        val = abs_linear_segments(np.array([v0]), np.array([v1]), np.array([dt]))[0]
        ref, _ = integrate.quad(
            lambda s: abs(v0 + (v1 - v0) * s / dt), 0, dt, points=[0, dt], limit=200
        )
        assert val == pytest.approx(ref, rel=1e-8, abs=1e-10)


class TestTimeAverage:
    def test_constant_probe_is_exactly_one(self):
        acc = simulate(MM1_07, 100_000, probes=[TimeProbe("one", lambda ch: ch.dt.copy())], seed=1)
        est = acc.rate("one")
        assert est.point == pytest.approx(1.0, abs=1e-12)
        assert est.half_width == pytest.approx(0.0, abs=1e-9)

    def test_empty_probability(self):
        acc = simulate(
            MM1_07, 400_000, probes=[TimeProbe("empty", lambda ch: ch.dt * (ch.q_total == 0))], seed=2
        )
        est = acc.rate("empty")
        assert abs(est.point - 0.3) <= 3 * est.se

    def test_residual_arrival_erlang(self):
        # Erlang(2, rate 2 lam) arrivals: E R_a = lam E U^2 / 2 = 3 / (4 lam)
        lam = 0.8
        model = GG1(Erlang(2, 2 * lam), Exponential(1.0))
        probes = [
            TimeProbe("ra", lambda ch: poly_product_segments(ch.dt, [(ch.r_a, None, 1)]))
        ]
        acc = simulate(model, 400_000, probes=probes, seed=3)
        est = acc.rate("ra")
        assert abs(est.point - 3 / (4 * lam)) <= 3 * est.se


class TestEventAverage:
    def test_arrival_rate(self):
        acc = simulate(
            MM1_07,
            400_000,
            probes=[EventProbe("nA", ("A", None), lambda ch, sel: np.ones(sel.size))],
            seed=4,
        )
        est = acc.rate("nA")
        assert abs(est.point - 0.7) <= 3 * est.se

    def test_fresh_interarrival_mass(self):
        acc = simulate(
            MM1_07,
            400_000,
            probes=[EventProbe("U", ("A", None), lambda ch, sel: ch.payload[sel])],
            seed=5,
        )
        est = acc.rate("U")
        assert abs(est.point - 1.0) <= 3 * est.se

    def test_fresh_sample_factorizes(self):
        # event average of g(U) = lam * E g(U) for g(u) = u^2
        lam = 0.7
        acc = simulate(
            MM1_07,
            400_000,
            probes=[EventProbe("U2", ("A", None), lambda ch, sel: ch.payload[sel] ** 2)],
            seed=6,
        )
        est = acc.rate("U2")
        target = lam * Exponential(lam).moment(2)
        assert abs(est.point - target) <= 3 * est.se

    def test_idle_ra_at_departures(self):
        acc = simulate(
            MM1_07,
            400_000,
            probes=[
                EventProbe(
                    "g", ("D", None), lambda ch, sel: ch.r_a[sel] * (ch.q_total_after[sel] == 0)
                )
            ],
            seed=7,
        )
        est = acc.rate("g")
        assert abs(est.point - 0.3) <= 3 * est.se


class TestWindowIntegrals:
    def test_unit_probe_arrival_window(self):
        probes = [WindowProbe("w1", ("A", None), lambda ch: np.ones(len(ch)))]
        acc = simulate(MM1_07, 400_000, probes=probes, seed=8)
        est = acc.rate("w1")
        assert abs(est.point - 1.0) <= 3 * est.se

    @pytest.mark.parametrize(
        "model,seed",
        [(MM1_08, 9), (JSQ(2, Exponential(1.8), Exponential(1.0)), 10)],
        ids=["gg1", "jsq"],
    )
    def test_palm_inversion_arrival_window(self, model, seed):
        f = lambda x: x
        probes = [
            time_probe_fx(model, "tx", f),
            WindowProbe("wx", ("A", None), seg_f_of_x(model, f)),
        ]
        acc = simulate(model, 600_000, probes=probes, seed=seed)
        ta, wi = acc.rate("tx"), acc.rate("wx")
        assert abs(ta.point - wi.point) <= 3 * (ta.se + wi.se)

    def test_palm_inversion_departure_window_gg1(self):
        f = lambda x: np.minimum(x, 5.0)
        probes = [
            time_probe_fx(MM1_08, "tf", f),
            WindowProbe("wf", ("D", 0), seg_f_of_x(MM1_08, f)),
        ]
        acc = simulate(MM1_08, 600_000, probes=probes, seed=11)
        ta, wi = acc.rate("tf"), acc.rate("wf")
        assert abs(ta.point - wi.point) <= 3 * (ta.se + wi.se)

    def test_palm_inversion_departure_window_jsq(self):
        model = JSQ(2, Exponential(1.8), Exponential(1.0))
        f = lambda x: x**2
        probes = [time_probe_fx(model, "tf", f)]
        for i in range(2):
            probes.append(WindowProbe(f"wf{i}", ("D", i), seg_f_of_x(model, f)))
        acc = simulate(model, 600_000, probes=probes, seed=12)
        ta = acc.rate("tf")
        for i in range(2):
            wi = acc.rate(f"wf{i}")
            assert abs(ta.point - wi.point) <= 3 * (ta.se + wi.se)

    def test_palm_inversion_departure_window_tandem(self):
        model = Tandem2(Exponential(0.8), Exponential(1.0), Exponential(1.0))
        f = lambda x: np.minimum(x, 5.0)
        probes = [time_probe_fx(model, "tf", f)]
        for i in range(2):
            probes.append(WindowProbe(f"wf{i}", ("D", i), seg_f_of_x(model, f)))
        acc = simulate(model, 600_000, probes=probes, seed=13)
        ta = acc.rate("tf")
        for i in range(2):
            wi = acc.rate(f"wf{i}")
            assert abs(ta.point - wi.point) <= 3 * (ta.se + wi.se)

    def test_trailing_windows_dropped_and_counted(self):
        probes = [WindowProbe("w", ("A", None), lambda ch: np.ones(len(ch)))]
        acc = simulate(MM1_07, 2000, probes=probes, seed=14, chunk_events=200)
        assert acc.dropped["w"] > 0
        assert np.isfinite(acc.rate("w").point)


class TestMergeAndCI:
    def test_merge_matches_concatenated_accounting(self):
        probes = lambda: [TimeProbe("x", lambda ch: ch.dt * ch.q_total)]
        a = simulate(MM1_07, 150_000, probes=probes(), seed=20)
        b = simulate(MM1_07, 150_000, probes=probes(), seed=21)
        merged = a.merge(b)
        assert merged.batches == a.batches + b.batches
        tot = a.batch_sums["x"].sum() + b.batch_sums["x"].sum()
        T = a.batch_time.sum() + b.batch_time.sum()
        assert merged.rate("x").point == pytest.approx(tot / T, rel=1e-12)
        # merging is commutative in point value and batch multiset
        swapped = b.merge(a)
        assert swapped.rate("x").point == merged.rate("x").point
        assert np.sort(swapped.batch_sums["x"]).tolist() == np.sort(merged.batch_sums["x"]).tolist()

    def test_merge_requires_same_probes(self):
        a = simulate(MM1_07, 50_000, probes=[TimeProbe("x", lambda ch: ch.dt)], seed=22)
        b = simulate(MM1_07, 50_000, probes=[TimeProbe("y", lambda ch: ch.dt)], seed=23)
        with pytest.raises(ValueError):
            a.merge(b)

    def test_estimate_ci_fields(self):
        e = EstimateCI(1.0, 0.1, 32, 0.99, 0.03)
        assert e.upper == pytest.approx(1.1)
        assert e.lower == pytest.approx(0.9)
        with pytest.raises(ValueError):
            EstimateCI(1.0, -0.1, 32)

    def test_duplicate_probe_ids_rejected(self):
        with pytest.raises(ValueError):
            simulate(
                MM1_07,
                1000,
                probes=[TimeProbe("x", lambda ch: ch.dt), TimeProbe("x", lambda ch: ch.dt)],
                seed=1,
            )
