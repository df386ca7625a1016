"""Stationary identity checks derived from the adjoint relation.

Every target on the right-hand side comes from clock closed forms only;
the left-hand sides are path estimates with batch-means CIs.  Equalities
pass when |estimate - target| <= se_multiple * SE; the mixed-moment
inequality is checked one-sidedly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import simulate
from .palm import EstimateCI, EventProbe, InsufficientDataError, TimeProbe, poly_product_segments

__all__ = [
    "IdentityRow",
    "IdentityReport",
    "gg1_identity_probes",
    "check_gg1",
    "jsq_identity_probes",
    "check_jsq",
    "conditional_residual_probes",
    "conditional_residual_estimate",
    "run_identity_suite",
]


@dataclass(frozen=True)
class IdentityRow:
    identity_id: str
    estimate: EstimateCI
    target: float
    passed: bool
    kind: str = "equality"  # or "upper_bound"


@dataclass
class IdentityReport:
    model_kind: str
    rows: list = field(default_factory=list)
    se_multiple: float = 3.0
    notes: list = field(default_factory=list)

    @property
    def all_passed(self):
        return all(r.passed for r in self.rows)

    def add_equality(self, identity_id, est: EstimateCI, target):
        ok = abs(est.point - target) <= self.se_multiple * est.se + 1e-12
        self.rows.append(IdentityRow(identity_id, est, target, ok))

    def add_upper_bound(self, identity_id, est: EstimateCI, bound):
        ok = est.point <= bound + self.se_multiple * est.se + 1e-12
        self.rows.append(IdentityRow(identity_id, est, bound, ok, kind="upper_bound"))


def _ra_pow(chunk, p):
    return poly_product_segments(chunk.dt, [(chunk.r_a, None, p)])


def _rs_pow_busy(chunk, i, p):
    vals = poly_product_segments(chunk.dt, [(chunk.r_s[:, i], chunk.busy[:, i], p)])
    return vals * chunk.busy[:, i]


def _rs_pow_idle(chunk, i, p):
    # idle clock is frozen: constant over the segment
    return chunk.dt * (~chunk.busy[:, i]) * chunk.r_s[:, i] ** p


def gg1_identity_probes(model, m_values=(2, 3)):
    by_id = {}

    def put(p):
        by_id.setdefault(p.id, p)

    put(EventProbe("n_A", ("A", None), lambda ch, sel: np.ones(sel.size)))
    put(EventProbe("n_D", ("D", None), lambda ch, sel: np.ones(sel.size)))
    put(TimeProbe("busy_frac", lambda ch: ch.dt * ch.busy[:, 0]))
    put(TimeProbe("idle_frac", lambda ch: ch.dt * ~ch.busy[:, 0]))
    put(
        EventProbe(
            "idle_ra_at_D",
            ("D", None),
            lambda ch, sel: ch.r_a[sel] * (ch.q_total_after[sel] == 0),
        )
    )
    put(EventProbe("ra_at_D", ("D", None), lambda ch, sel: ch.r_a[sel]))
    put(EventProbe("rs_at_A", ("A", None), lambda ch, sel: ch.r_s[sel, 0]))
    # powers used by the residual-moment identities plus the mixed inequality
    for p in sorted({1} | {m - 1 for m in m_values}):
        put(TimeProbe(f"ra_pow{p}", lambda ch, p=p: _ra_pow(ch, p)))
        put(TimeProbe(f"rs_pow{p}_busy", lambda ch, p=p: _rs_pow_busy(ch, 0, p)))
    for p in sorted({1} | set(m_values)):
        put(TimeProbe(f"rs_pow{p}_idle", lambda ch, p=p: _rs_pow_idle(ch, 0, p)))
    return list(by_id.values())


def check_gg1(model, acc, m_values=(2, 3), se_multiple=3.0) -> IdentityReport:
    if model.kind != "gg1":
        raise ValueError(f"expected a single-server model, got {model.kind}")
    lam, mu, rho = model.lam, model.mu, model.rho
    U, S = model.arrival, model.service
    rep = IdentityReport(model.kind, se_multiple=se_multiple)
    rep.add_equality("arrival_rate", acc.rate("n_A"), lam)
    rep.add_equality("departure_rate", acc.rate("n_D"), lam)
    rep.add_equality("busy_probability", acc.rate("busy_frac"), rho)
    for m in m_values:
        rep.add_equality(
            f"residual_arrival_m{m}", acc.rate(f"ra_pow{m - 1}"), lam * U.moment(m) / m
        )
        rep.add_equality(
            f"residual_service_busy_m{m}",
            acc.rate(f"rs_pow{m - 1}_busy"),
            lam * S.moment(m) / m,
        )
        rep.add_equality(
            f"residual_service_idle_m{m}",
            acc.ratio(f"rs_pow{m}_idle", "idle_frac"),
            S.moment(m),
        )
    rep.add_equality("idle_ra_at_departures", acc.rate("idle_ra_at_D"), 1.0 - rho)
    # E S * E int R_a dD + E U * E int R_s dA <= E R_s + E R_a, one-sided
    lhs_minus_rhs = acc.combo(
        [
            (S.moment(1), "ra_at_D"),
            (U.moment(1), "rs_at_A"),
            (-1.0, "rs_pow1_busy"),
            (-1.0, "rs_pow1_idle"),
            (-1.0, "ra_pow1"),
        ]
    )
    rep.add_upper_bound("mixed_moment_inequality", lhs_minus_rhs, 0.0)
    if len(rep.rows) > 10:
        rep.notes.append(
            f"{len(rep.rows)} identities checked at {se_multiple} SE each; "
            "expect occasional marginal failures without a Bonferroni correction"
        )
    return rep


def jsq_identity_probes(model, m_values=(2, 3)):
    n = model.n
    probes = [EventProbe("n_A", ("A", None), lambda ch, sel: np.ones(sel.size))]
    for p in sorted({m - 1 for m in m_values}):
        probes.append(TimeProbe(f"ra_pow{p}", lambda ch, p=p: _ra_pow(ch, p)))
    for i in range(n):
        probes.append(EventProbe(f"n_D{i}", ("D", i), lambda ch, sel: np.ones(sel.size)))
        probes.append(TimeProbe(f"busy{i}_frac", lambda ch, i=i: ch.dt * ch.busy[:, i]))
        probes.append(TimeProbe(f"idle{i}_frac", lambda ch, i=i: ch.dt * ~ch.busy[:, i]))
        for m in m_values:
            probes.append(
                TimeProbe(f"rs{i}_pow{m - 1}_busy", lambda ch, i=i, p=m - 1: _rs_pow_busy(ch, i, p))
            )
            probes.append(
                TimeProbe(f"rs{i}_pow{m}_idle", lambda ch, i=i, p=m: _rs_pow_idle(ch, i, p))
            )
    return probes


def check_jsq(model, acc, m_values=(2, 3), se_multiple=3.0) -> IdentityReport:
    if model.kind != "jsq":
        raise ValueError(f"expected a shortest-queue model, got {model.kind}")
    lam, rho, n = model.lam, model.rho, model.n
    U, S = model.arrival, model.service
    rep = IdentityReport(model.kind, se_multiple=se_multiple)
    rep.add_equality("arrival_rate", acc.rate("n_A"), lam)
    for m in m_values:
        rep.add_equality(
            f"residual_arrival_m{m}", acc.rate(f"ra_pow{m - 1}"), lam * U.moment(m) / m
        )
    for i in range(n):
        rep.add_equality(f"departure_rate_server{i}", acc.rate(f"n_D{i}"), lam / n)
        rep.add_equality(f"busy_probability_server{i}", acc.rate(f"busy{i}_frac"), rho)
        for m in m_values:
            rep.add_equality(
                f"residual_service_busy_m{m}_server{i}",
                acc.rate(f"rs{i}_pow{m - 1}_busy"),
                (lam / n) * S.moment(m) / m,
            )
            rep.add_equality(
                f"residual_service_idle_m{m}_server{i}",
                acc.ratio(f"rs{i}_pow{m}_idle", f"idle{i}_frac"),
                S.moment(m),
            )
    if len(rep.rows) > 10:
        rep.notes.append(
            f"{len(rep.rows)} identities checked at {se_multiple} SE each; "
            "expect occasional marginal failures without a Bonferroni correction"
        )
    return rep


def conditional_residual_probes(model):
    """Probes for both estimators of E(R_a | system empty)."""
    return [
        TimeProbe("cr_idle_frac", lambda ch: ch.dt * (ch.q_total == 0)),
        TimeProbe("cr_ra_idle", lambda ch: _ra_pow(ch, 1) * (ch.q_total == 0)),
        # an empty-system spell is a single segment ending in an arrival
        EventProbe(
            "cr_idle_len",
            ("A", None),
            lambda ch, sel: ch.dt[sel] * (ch.q_total[sel] == 0),
        ),
        EventProbe(
            "cr_idle_len_sq",
            ("A", None),
            lambda ch, sel: ch.dt[sel] ** 2 * (ch.q_total[sel] == 0),
        ),
    ]


@dataclass(frozen=True)
class ConditionalResidualReport:
    time_average_route: EstimateCI
    idle_period_route: object  # EstimateCI or None when no idle spell was seen
    crude_bound: float
    agree: bool


def conditional_residual_estimate(model, acc, se_multiple=3.0) -> ConditionalResidualReport:
    """E(R_a | X = 0) two ways: conditional time average, and the idle-period
    ratio E I^2 / (2 E I) over recorded empty spells."""
    if model.kind != "gg1":
        raise ValueError("conditional residual is defined for the single-server model")
    ta = acc.ratio("cr_ra_idle", "cr_idle_frac")
    try:
        idle = acc.ratio("cr_idle_len_sq", "cr_idle_len")
        idle = EstimateCI(idle.point / 2, idle.half_width / 2, idle.batches, idle.confidence, idle.se / 2)
        agree = abs(ta.point - idle.point) <= se_multiple * (ta.se + idle.se)
    except InsufficientDataError:
        idle = None
        agree = False
    crude = model.delta ** (-0.5) * model.lam * model.arrival.moment(3) / 3.0
    return ConditionalResidualReport(ta, idle, crude, agree)


def run_identity_suite(model, total_events, seed, m_values=(2, 3), se_multiple=3.0, burn_in=None):
    """Simulate and check every identity for the model's kind."""
    if model.tie_risk:
        raise ValueError(
            "model has deterministic clock ties; excluded from identity acceptance runs"
        )
    if model.kind == "gg1":
        probes = gg1_identity_probes(model, m_values) + conditional_residual_probes(model)
        acc = simulate(model, total_events, burn_in, probes=probes, seed=seed)
        rep = check_gg1(model, acc, m_values, se_multiple)
        return rep, acc
    if model.kind == "jsq":
        probes = jsq_identity_probes(model, m_values)
        acc = simulate(model, total_events, burn_in, probes=probes, seed=seed)
        rep = check_jsq(model, acc, m_values, se_multiple)
        return rep, acc
    raise ValueError(
        "no proven identity set for the tandem model; per-station residual checks are exploratory only"
    )
