"""Path-functional estimators over simulated event chunks.

Three estimator families, all exact per inter-event segment:

* time averages  E f(Z)            -- closed-form segment integrals,
* event averages E int_0^1 g dN    -- jump sums divided by horizon,
* window integrals E int_0^1 int_0^W f(X(t+u)) du dN(t)  -- the inner
  integral is a finite sum of rectangles because X is piecewise constant.

Estimates carry batch-means confidence intervals (default 32 batches,
Student-t, 99%).  Accumulators from independent replications merge by
concatenating batch partials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit
from scipy import stats

__all__ = [
    "EstimateCI",
    "TimeProbe",
    "EventProbe",
    "WindowProbe",
    "PalmAccumulators",
    "InsufficientDataError",
    "poly_product_segments",
    "abs_linear_segments",
]

ARRIVAL = 0
DEPARTURE = 1


class InsufficientDataError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimateCI:
    """Point estimate with a batch-means (or bootstrap) confidence interval."""

    point: float
    half_width: float
    batches: int
    confidence: float = 0.99
    se: float = 0.0

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be nonnegative")

    @property
    def upper(self):
        return self.point + self.half_width

    @property
    def lower(self):
        return self.point - self.half_width


def _ci_from_batch_means(point, means, confidence):
    means = np.asarray(means, dtype=float)
    b = means.size
    if b < 2:
        return EstimateCI(point, np.inf, b, confidence, np.inf)
    se = float(np.std(means, ddof=1) / np.sqrt(b))
    hw = float(stats.t.ppf(0.5 * (1 + confidence), b - 1) * se)
    return EstimateCI(float(point), hw, b, confidence, se)


@dataclass
class TimeProbe:
    """Exact per-segment integrals of a state functional."""

    id: str
    segments: Callable


@dataclass
class EventProbe:
    """Values g(state at t-, payload) summed over jumps of one process.

    process is ("A", station-or-None) or ("D", station-or-None); a station
    filters arrivals by routing target or departures by origin.  With
    needs_lambda the value callback also receives, per selected event, the
    time until the next routing to `process[1]` (0 when the queue stays
    busy); events whose lookup cannot resolve inside the chunk are dropped
    and counted.
    """

    id: str
    process: tuple
    values: Callable
    needs_lambda: bool = False


@dataclass
class WindowProbe:
    """Inner integral of f(X(t+u)) over an event window, exactly.

    Windows: arrivals use the fresh interarrival payload; departures from
    station i use (time to next routing to i if the queue empties) plus the
    fresh service payload.  With absdiff=True the integrand is
    |f(X(t+u)) - ref(trigger)|.  Trailing windows that cannot be resolved
    inside the chunk are dropped and counted.
    """

    id: str
    process: tuple
    seg_values: Callable
    absdiff: bool = False
    ref_values: Optional[Callable] = None


@njit(cache=True)
def _window_sums(t, seg_vals, trig, winlen, refs, absdiff, out):
    m = t.shape[0]
    dropped = 0
    for k in range(trig.shape[0]):
        m0 = trig[k]
        end = t[m0] + winlen[k]
        if end > t[m - 1]:
            out[k] = np.nan
            dropped += 1
            continue
        acc = 0.0
        left = t[m0]
        j = m0 + 1
        while j < m and left < end:
            right = t[j]
            if right > end:
                right = end
            v = seg_vals[j]
            if absdiff:
                v = abs(v - refs[k])
            acc += v * (right - left)
            left = t[j]
            j += 1
        out[k] = acc
    return dropped


def _routing_times(chunk, station):
    """Times of events that route a customer to `station`."""
    model = chunk.model
    if model.kind == "tandem" and station == 1:
        mask = (chunk.kind == DEPARTURE) & (chunk.station == 0)
    elif model.kind == "jsq":
        mask = (chunk.kind == ARRIVAL) & (chunk.station == station)
    else:
        mask = chunk.kind == ARRIVAL
    return chunk.t[mask]


def _lambda_lookup(chunk, trig, station):
    """Time from each trigger to the next routing to `station`; NaN if unresolved."""
    rt = _routing_times(chunk, station)
    tt = chunk.t[trig]
    pos = np.searchsorted(rt, tt, side="right")
    lam = np.full(trig.shape[0], np.nan)
    ok = pos < rt.size
    lam[ok] = rt[pos[ok]] - tt[ok]
    return lam


def _select(chunk, process):
    proc, st = process
    if proc == "A":
        mask = chunk.kind == ARRIVAL
    elif proc == "D":
        mask = chunk.kind == DEPARTURE
    else:
        raise ValueError(f"unknown process {proc!r}")
    if st is not None:
        mask = mask & (chunk.station == st)
    return np.nonzero(mask)[0]


def _window_lengths(chunk, trig, process):
    """Window per trigger; NaN marks unresolved routing lookups."""
    proc, st = process
    w = chunk.payload[trig].astype(float).copy()
    if proc == "D":
        if st is None:
            raise ValueError("departure windows need a station")
        empties = chunk.q_after[trig, st] == 0
        if np.any(empties):
            lam = _lambda_lookup(chunk, trig[empties], st)
            w[empties] += lam
    return w


class PalmAccumulators:
    """Per-batch partial sums for a fixed probe set over one or more runs."""

    def __init__(self, model, probes, batches, confidence, measurement_events):
        ids = [p.id for p in probes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate probe ids")
        self.model = model
        self.probes = list(probes)
        self.batches = batches
        self.confidence = confidence
        self.measurement_events = measurement_events
        self.batch_time = np.zeros(batches)
        self.batch_sums = {p.id: np.zeros(batches) for p in probes}
        self.batch_counts = {p.id: np.zeros(batches) for p in probes}
        self.dropped = {p.id: 0 for p in probes}
        self.total_events = 0
        self.burned_events = 0
        self.ties = 0
        self.regens_burn_in = 0
        self.burn_in_flags = []
        self.snapshots = None

    @property
    def horizon(self):
        return float(self.batch_time.sum())

    def add_chunk(self, chunk, gidx0):
        m = chunk.dt.shape[0]
        b = ((gidx0 + np.arange(m, dtype=np.int64)) * self.batches) // self.measurement_events
        self.batch_time += np.bincount(b, weights=chunk.dt, minlength=self.batches)
        self.total_events += m
        for p in self.probes:
            if isinstance(p, TimeProbe):
                vals = p.segments(chunk)
                self._check_finite(p.id, vals)
                self.batch_sums[p.id] += np.bincount(b, weights=vals, minlength=self.batches)
                self.batch_counts[p.id] += np.bincount(b, minlength=self.batches)
            elif isinstance(p, EventProbe):
                sel = _select(chunk, p.process)
                if sel.size == 0:
                    continue
                if p.needs_lambda:
                    st = p.process[1]
                    lam = np.zeros(sel.size)
                    empties = chunk.q_after[sel, st] == 0
                    if np.any(empties):
                        lam[empties] = _lambda_lookup(chunk, sel[empties], st)
                    vals = p.values(chunk, sel, lam)
                else:
                    vals = p.values(chunk, sel)
                ok = np.isfinite(vals)
                self.dropped[p.id] += int(np.sum(~ok))
                self.batch_sums[p.id] += np.bincount(b[sel[ok]], weights=vals[ok], minlength=self.batches)
                self.batch_counts[p.id] += np.bincount(b[sel[ok]], minlength=self.batches)
            elif isinstance(p, WindowProbe):
                trig = _select(chunk, p.process)
                if trig.size == 0:
                    continue
                w = _window_lengths(chunk, trig, p.process)
                segv = np.ascontiguousarray(p.seg_values(chunk), dtype=float)
                refs = (
                    np.ascontiguousarray(p.ref_values(chunk, trig), dtype=float)
                    if p.absdiff
                    else np.zeros(trig.size)
                )
                out = np.empty(trig.size)
                bad_w = ~np.isfinite(w)
                w = np.where(bad_w, 0.0, w)
                _window_sums(chunk.t, segv, trig, w, refs, p.absdiff, out)
                out[bad_w] = np.nan
                ok = np.isfinite(out)
                self.dropped[p.id] += int(np.sum(~ok))
                self._check_finite(p.id, out[ok])
                self.batch_sums[p.id] += np.bincount(b[trig[ok]], weights=out[ok], minlength=self.batches)
                self.batch_counts[p.id] += np.bincount(b[trig[ok]], minlength=self.batches)
            else:
                raise TypeError(f"unknown probe type {type(p)!r}")

    @staticmethod
    def _check_finite(pid, vals):
        if vals.size and not np.all(np.isfinite(vals)):
            raise RuntimeError(f"probe {pid!r} produced non-finite values; run aborted")

    # ---- estimates ------------------------------------------------------

    def rate(self, pid) -> EstimateCI:
        """Long-run rate: (sum of contributions) / horizon."""
        sums = self.batch_sums[pid]
        point = sums.sum() / self.batch_time.sum()
        return _ci_from_batch_means(point, sums / self.batch_time, self.confidence)

    def ratio(self, pid_num, pid_den) -> EstimateCI:
        """Ratio of two rates, e.g. a conditional time average."""
        num = self.batch_sums[pid_num]
        den = self.batch_sums[pid_den]
        tot = den.sum()
        if tot <= 0:
            raise InsufficientDataError(f"no mass observed for denominator {pid_den!r}")
        ok = den > 0
        if np.sum(ok) < 2:
            raise InsufficientDataError(f"fewer than two batches with mass for {pid_den!r}")
        return _ci_from_batch_means(num.sum() / tot, num[ok] / den[ok], self.confidence)

    def combo(self, terms) -> EstimateCI:
        """CI of a fixed linear combination sum_j coef_j * rate(pid_j)."""
        T = self.batch_time
        point = 0.0
        means = np.zeros(self.batches)
        for coef, pid in terms:
            sums = self.batch_sums[pid]
            point += coef * sums.sum() / T.sum()
            means += coef * sums / T
        return _ci_from_batch_means(point, means, self.confidence)

    def count(self, pid) -> float:
        return float(self.batch_counts[pid].sum())

    # ---- merging --------------------------------------------------------

    def merge(self, other) -> "PalmAccumulators":
        """Combine batch partials from a disjoint path (e.g. another replication)."""
        if set(self.batch_sums) != set(other.batch_sums):
            raise ValueError("cannot merge accumulators with different probe sets")
        out = PalmAccumulators(
            self.model,
            self.probes,
            self.batches + other.batches,
            self.confidence,
            self.measurement_events + other.measurement_events,
        )
        out.batch_time = np.concatenate([self.batch_time, other.batch_time])
        for pid in self.batch_sums:
            out.batch_sums[pid] = np.concatenate([self.batch_sums[pid], other.batch_sums[pid]])
            out.batch_counts[pid] = np.concatenate([self.batch_counts[pid], other.batch_counts[pid]])
            out.dropped[pid] = self.dropped[pid] + other.dropped[pid]
        out.total_events = self.total_events + other.total_events
        out.burned_events = self.burned_events + other.burned_events
        out.ties = self.ties + other.ties
        out.regens_burn_in = self.regens_burn_in + other.regens_burn_in
        out.burn_in_flags = self.burn_in_flags + other.burn_in_flags
        return out


# ---- exact segment integral helpers -------------------------------------


def poly_product_segments(dt, factors):
    """Exact int_0^dt prod_j (c_j + a_j s)^{p_j} ds, vectorized over segments.

    factors: list of (end_values, active, power); the clock value at time
    s before the segment end is end + s when active else constant.  Builds
    polynomial coefficients in s by binomial expansion and convolution.
    """
    m = dt.shape[0]
    coeffs = [np.ones(m)]
    from math import comb

    for end, active, p in factors:
        if active is None:
            a = np.ones(m)
        else:
            a = active.astype(float)
        fac = []
        for i in range(p + 1):
            fac.append(comb(p, i) * end ** (p - i) * a**i)
        new = [np.zeros(m) for _ in range(len(coeffs) + p)]
        for i, ci in enumerate(coeffs):
            for j, fj in enumerate(fac):
                new[i + j] = new[i + j] + ci * fj
        coeffs = new
    total = np.zeros(m)
    dpow = dt.copy()
    for d, cd in enumerate(coeffs):
        total += cd * dpow / (d + 1)
        dpow = dpow * dt
    return total


def abs_linear_segments(v_start, v_end, dt):
    """Exact int_0^dt |v(s)| ds for v linear from v_start to v_end."""
    same = v_start * v_end >= 0
    trap = 0.5 * (np.abs(v_start) + np.abs(v_end)) * dt
    denom = np.abs(v_end - v_start)
    denom = np.where(denom > 0, denom, 1.0)
    cross = 0.5 * (v_start**2 + v_end**2) / denom * dt
    return np.where(same, trap, cross)
