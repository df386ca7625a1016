"""Event-driven simulator maintaining the full state (queues, residual clocks).

Conventions that the stationary identities depend on:

* an idle server carries a pre-sampled service time which does NOT decay;
  it becomes the in-service residual when a customer starts service;
* when a departure empties a queue, the freshly sampled next service time
  is recorded and then frozen;
* exact residual subtraction, no time discretization;
* exact clock ties (possible only with deterministic clocks) resolve as
  departures before arrivals, lower station first, and are counted.

The hot path runs in a numba kernel over pre-drawn variate buffers; one
independent substream per clock per replication keeps consumption order,
and hence the whole path, reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .clocks import substreams
from .models import SystemState
from .palm import ARRIVAL, DEPARTURE, PalmAccumulators

__all__ = [
    "EventRecord",
    "EngineStreams",
    "step",
    "simulate",
    "stationary_samples",
    "stationary_scaled_totals",
    "iter_chunks",
    "Chunk",
    "initial_state",
    "write_event_log",
]


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str  # "arrival" | "departure"
    station: int
    state_before: SystemState
    jump_payload: float
    routed_to: Optional[int] = None


@njit(cache=True)
def _run_core(model_kind, n_st, q, r_s, scal, u_buf, s_buf, route_buf, n_events,
              out_t, out_dt, out_kind, out_station, out_q, out_ra, out_rs, out_pay, consumed):
    # model_kind: 0 single queue, 1 shortest-queue routing, 2 two in series
    u_pos = 0
    route_pos = 0
    ties = 0
    regens = 0
    r_a = scal[0]
    t = scal[1]
    for m in range(n_events):
        best = r_a
        ev = ARRIVAL
        st = -1
        for i in range(n_st):
            if q[i] > 0:
                ri = r_s[i]
                if ri == best:
                    ties += 1
                    if ev == ARRIVAL:
                        best = ri
                        ev = DEPARTURE
                        st = i
                elif ri < best:
                    best = ri
                    ev = DEPARTURE
                    st = i
        t += best
        r_a -= best
        for i in range(n_st):
            if q[i] > 0:
                r_s[i] -= best
        if ev == DEPARTURE:
            r_s[st] = 0.0
        else:
            r_a = 0.0
        out_t[m] = t
        out_dt[m] = best
        out_kind[m] = ev
        out_ra[m] = r_a
        total = 0
        for i in range(n_st):
            out_q[m, i] = q[i]
            out_rs[m, i] = r_s[i]
            total += q[i]
        if ev == ARRIVAL:
            if model_kind == 1:
                qmin = q[0]
                for i in range(1, n_st):
                    if q[i] < qmin:
                        qmin = q[i]
                cnt = 0
                for i in range(n_st):
                    if q[i] == qmin:
                        cnt += 1
                pick = int(route_buf[route_pos] * cnt)
                if pick >= cnt:
                    pick = cnt - 1
                route_pos += 1
                st = 0
                for i in range(n_st):
                    if q[i] == qmin:
                        if pick == 0:
                            st = i
                            break
                        pick -= 1
            else:
                st = 0
            if total == 0:
                regens += 1
            q[st] += 1
            pay = u_buf[u_pos]
            u_pos += 1
            r_a = pay
        else:
            q[st] -= 1
            if model_kind == 2 and st == 0:
                q[1] += 1
            pay = s_buf[st, consumed[1 + st]]
            consumed[1 + st] += 1
            r_s[st] = pay
        out_station[m] = st
        out_pay[m] = pay
    scal[0] = r_a
    scal[1] = t
    consumed[0] = u_pos
    consumed[1 + n_st] = route_pos
    return ties, regens


_MODEL_CODES = {"gg1": 0, "jsq": 1, "tandem": 2}


@dataclass
class EngineStreams:
    """One independent generator per clock plus one for routing tie-breaks."""

    arrival: np.random.Generator
    services: list
    routing: np.random.Generator

    @classmethod
    def for_model(cls, model, seed):
        gens = substreams(seed, model.n_stations + 2)
        return cls(arrival=gens[0], services=gens[1 : 1 + model.n_stations], routing=gens[-1])


def initial_state(model, streams: EngineStreams) -> SystemState:
    """Empty system; every clock pre-sampled (idle samples frozen)."""
    r_a = model.arrival.sample(streams.arrival)
    r_s = tuple(model.services[i].sample(streams.services[i]) for i in range(model.n_stations))
    return SystemState(queues=(0,) * model.n_stations, r_arrival=r_a, r_service=r_s, clock_time=0.0)


def step(state: SystemState, model, streams: EngineStreams):
    """Advance to the next event.  Reference implementation of the kernel's
    conventions; samples lazily from the same per-clock substreams so its
    event log matches the chunked driver exactly."""
    n_st = model.n_stations
    q = list(state.queues)
    r_s = list(state.r_service)
    r_a = state.r_arrival
    best = r_a
    ev = ARRIVAL
    st = -1
    for i in range(n_st):
        if q[i] > 0 and (r_s[i] < best or (r_s[i] == best and ev == ARRIVAL)):
            best = r_s[i]
            ev = DEPARTURE
            st = i
    t = state.clock_time + best
    r_a -= best
    for i in range(n_st):
        if q[i] > 0:
            r_s[i] -= best
    if ev == DEPARTURE:
        r_s[st] = 0.0
    else:
        r_a = 0.0
    before = SystemState(tuple(q), r_a, tuple(r_s), t)
    routed = None
    if ev == ARRIVAL:
        if model.kind == "jsq":
            qmin = min(q)
            mins = [i for i in range(n_st) if q[i] == qmin]
            u = streams.routing.random()
            st = mins[min(int(u * len(mins)), len(mins) - 1)]
        else:
            st = 0
        routed = st
        q[st] += 1
        pay = model.arrival.sample(streams.arrival)
        r_a = pay
    else:
        q[st] -= 1
        if model.kind == "tandem" and st == 0:
            q[1] += 1
        pay = model.services[st].sample(streams.services[st])
        r_s[st] = pay
    new = SystemState(tuple(q), r_a, tuple(r_s), t)
    rec = EventRecord(
        time=t,
        kind="arrival" if ev == ARRIVAL else "departure",
        station=st,
        state_before=before,
        jump_payload=pay,
        routed_to=routed if model.kind == "jsq" else None,
    )
    return new, rec


class Chunk:
    """A block of consecutive events as flat arrays.

    Arrays hold the state at t- (queues before the jump; clocks decayed,
    the firing clock exactly zero).  Segment k covers (t[k]-dt[k], t[k]]
    during which queues equal q[k] and active clocks decay linearly to
    their recorded values.
    """

    def __init__(self, model, start_index, t, dt, kind, station, q, r_a, r_s, payload):
        self.model = model
        self.start_index = start_index
        self.t = t
        self.dt = dt
        self.kind = kind
        self.station = station
        self.q = q
        self.r_a = r_a
        self.r_s = r_s
        self.payload = payload
        self._memo = {}

    def __len__(self):
        return self.dt.shape[0]

    def _cached(self, key, fn):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    @property
    def busy(self):
        return self._cached("busy", lambda: self.q > 0)

    @property
    def r_a_start(self):
        return self._cached("r_a_start", lambda: self.r_a + self.dt)

    @property
    def r_s_start(self):
        return self._cached("r_s_start", lambda: self.r_s + self.dt[:, None] * self.busy)

    @property
    def q_total(self):
        return self._cached("q_total", lambda: self.q.sum(axis=1))

    @property
    def q_after(self):
        def build():
            qa = self.q.copy()
            rows = np.arange(len(self))
            delta = np.where(self.kind == ARRIVAL, 1, -1)
            qa[rows, self.station] += delta
            if self.model.kind == "tandem":
                push = (self.kind == DEPARTURE) & (self.station == 0)
                qa[push, 1] += 1
            return qa

        return self._cached("q_after", build)

    @property
    def q_total_after(self):
        return self._cached("q_total_after", lambda: self.q_after.sum(axis=1))

    @property
    def r_a_after(self):
        return self._cached(
            "r_a_after", lambda: np.where(self.kind == ARRIVAL, self.payload, self.r_a)
        )

    @property
    def r_s_after(self):
        def build():
            rs = self.r_s.copy()
            rows = np.nonzero(self.kind == DEPARTURE)[0]
            rs[rows, self.station[rows]] = self.payload[rows]
            return rs

        return self._cached("r_s_after", build)


class _VariateBuffer:
    """Pre-drawn variates carried across chunk boundaries so that each
    stream's k-th draw is consumed k-th regardless of chunking."""

    def __init__(self, clock, rng):
        self.clock = clock
        self.rng = rng
        self.pending = np.empty(0)

    def ensure(self, need):
        if self.pending.shape[0] < need:
            fresh = self.clock.sample_many(self.rng, need - self.pending.shape[0])
            self.pending = np.concatenate([self.pending, fresh])
        return self.pending

    def consume(self, k):
        self.pending = self.pending[k:].copy()


class _UniformBuffer:
    def __init__(self, rng):
        self.rng = rng
        self.pending = np.empty(0)

    def ensure(self, need):
        if self.pending.shape[0] < need:
            self.pending = np.concatenate([self.pending, self.rng.random(need - self.pending.shape[0])])
        return self.pending

    def consume(self, k):
        self.pending = self.pending[k:].copy()


def iter_chunks(model, seed, total_events, chunk_events=1 << 20):
    """Yield Chunks covering exactly total_events events."""
    streams = EngineStreams.for_model(model, seed)
    n_st = model.n_stations
    state = initial_state(model, streams)
    q = np.array(state.queues, dtype=np.int64)
    r_s = np.array(state.r_service, dtype=float)
    scal = np.array([state.r_arrival, 0.0])
    u_buf = _VariateBuffer(model.arrival, streams.arrival)
    s_bufs = [_VariateBuffer(model.services[i], streams.services[i]) for i in range(n_st)]
    route_buf = _UniformBuffer(streams.routing)
    code = _MODEL_CODES[model.kind]
    done = 0
    while done < total_events:
        m = min(chunk_events, total_events - done)
        u = u_buf.ensure(m)
        ss = [s_bufs[i].ensure(m) for i in range(n_st)]
        smax = max(s.shape[0] for s in ss)
        s_arr = np.empty((n_st, smax))
        for i in range(n_st):
            s_arr[i, : ss[i].shape[0]] = ss[i]
        rt = route_buf.ensure(m) if model.kind == "jsq" else np.zeros(1)
        out_t = np.empty(m)
        out_dt = np.empty(m)
        out_kind = np.empty(m, np.uint8)
        out_station = np.empty(m, np.int64)
        out_q = np.empty((m, n_st), np.int64)
        out_ra = np.empty(m)
        out_rs = np.empty((m, n_st))
        out_pay = np.empty(m)
        consumed = np.zeros(n_st + 2, np.int64)
        ties, regens = _run_core(
            code, n_st, q, r_s, scal, u, s_arr, rt, m,
            out_t, out_dt, out_kind, out_station, out_q, out_ra, out_rs, out_pay, consumed,
        )
        u_buf.consume(int(consumed[0]))
        for i in range(n_st):
            s_bufs[i].consume(int(consumed[1 + i]))
        if model.kind == "jsq":
            route_buf.consume(int(consumed[1 + n_st]))
        chunk = Chunk(model, done, out_t, out_dt, out_kind, out_station, out_q, out_ra, out_rs, out_pay)
        chunk.ties = ties
        chunk.regens = regens
        yield chunk
        done += m


def default_burn_in(total_events):
    return max(1, total_events // 10)


def simulate(
    model,
    total_events,
    burn_in_events=None,
    probes=(),
    seed=0,
    *,
    batches=32,
    confidence=0.99,
    chunk_events=1 << 20,
    snapshot_dt=None,
    snapshot_limit=None,
    min_regenerations=10,
) -> PalmAccumulators:
    """Run the model for total_events events, feeding probes after burn-in.

    Default burn-in is 10% of events, extended (in chunks, capped at 50%)
    until the system has regenerated min_regenerations times; an explicit
    burn_in_events is used verbatim.  Deterministic given (model, seed).
    """
    if total_events <= (burn_in_events or 0):
        raise ValueError("total_events must exceed burn_in_events")
    adaptive = burn_in_events is None
    burn_target = min(default_burn_in(total_events) if adaptive else burn_in_events, total_events)
    cap = total_events // 2
    flags = []

    gen = iter_chunks(model, seed, total_events, chunk_events)
    state = {"pending": None, "ties": 0}

    def take_events(n, consumer):
        got = 0
        while got < n:
            if state["pending"] is not None:
                chunk = state["pending"]
                state["pending"] = None
            else:
                chunk = next(gen)
                state["ties"] += chunk.ties
            m = len(chunk)
            if got + m > n:
                split = n - got
                consumer(_slice_chunk(chunk, 0, split))
                state["pending"] = _slice_chunk(chunk, split, m)
                got = n
            else:
                consumer(chunk)
                got += m

    regen_box = {"n": 0}

    def burn_consumer(piece):
        regen_box["n"] += int(np.sum((piece.kind == ARRIVAL) & (piece.q_total == 0)))

    take_events(burn_target, burn_consumer)
    burned = burn_target
    if adaptive:
        while regen_box["n"] < min_regenerations and burned < cap:
            extra = min(65536, cap - burned)
            take_events(extra, burn_consumer)
            burned += extra
        if regen_box["n"] < min_regenerations:
            flags.append(
                f"burn-in capped at {burned} events with only {regen_box['n']} regenerations"
            )

    measurement = total_events - burned
    acc = PalmAccumulators(model, probes, batches, confidence, measurement)
    acc.burned_events = burned
    acc.regens_burn_in = regen_box["n"]
    acc.burn_in_flags = flags
    if model.tie_risk:
        acc.burn_in_flags.append("tie-risk model: deterministic clocks may produce exact event ties")

    snap = None
    if snapshot_dt is not None:
        snap = _SnapshotCollector(model, snapshot_dt, snapshot_limit)

    pos = {"g": 0}

    def meas_consumer(piece):
        acc.add_chunk(piece, pos["g"])
        if snap:
            snap.add(piece, pos["g"])
        pos["g"] += len(piece)

    take_events(measurement, meas_consumer)
    acc.ties = state["ties"]
    if snap:
        acc.snapshots = snap.finish()
    return acc


def _slice_chunk(chunk, lo, hi):
    if lo == 0 and hi == len(chunk):
        return chunk
    piece = Chunk(
        chunk.model,
        chunk.start_index + lo,
        chunk.t[lo:hi],
        chunk.dt[lo:hi],
        chunk.kind[lo:hi],
        chunk.station[lo:hi],
        chunk.q[lo:hi],
        chunk.r_a[lo:hi],
        chunk.r_s[lo:hi],
        chunk.payload[lo:hi],
    )
    piece.ties = 0
    piece.regens = 0
    return piece


class _SnapshotCollector:
    """States on a deterministic time grid.

    Sampling at event epochs would be biased toward busy periods (events
    cluster where more clocks run), so snapshots are read off the path at
    fixed times t0 + k*dt; within a segment the queues are the segment's
    and active clocks are advanced exactly.
    """

    def __init__(self, model, grid_dt, limit):
        self.model = model
        self.grid_dt = grid_dt
        self.limit = limit
        self.k = 1
        self.t0 = None
        self.rows = []

    def add(self, chunk, gidx):
        if self.t0 is None:
            self.t0 = chunk.t[0] - chunk.dt[0]
        if self.limit is not None and self.k > self.limit:
            return
        t_end = chunk.t[-1]
        taus = []
        while True:
            tau = self.t0 + self.k * self.grid_dt
            if tau > t_end or (self.limit is not None and self.k > self.limit):
                break
            taus.append(tau)
            self.k += 1
        if not taus:
            return
        taus = np.array(taus)
        j = np.searchsorted(chunk.t, taus, side="left")
        lag = chunk.t[j] - taus
        q = chunk.q[j].copy()
        r_a = chunk.r_a[j] + lag
        r_s = chunk.r_s[j] + lag[:, None] * chunk.busy[j]
        self.rows.append((q, r_a, r_s, taus))

    def finish(self):
        if not self.rows:
            k = self.model.n_stations
            return {
                "q": np.zeros((0, k), np.int64),
                "r_a": np.zeros(0),
                "r_s": np.zeros((0, k)),
                "t": np.zeros(0),
            }
        return {
            "q": np.concatenate([r[0] for r in self.rows]),
            "r_a": np.concatenate([r[1] for r in self.rows]),
            "r_s": np.concatenate([r[2] for r in self.rows]),
            "t": np.concatenate([r[3] for r in self.rows]),
        }


def mean_event_rate(model):
    """Stationary events per unit time: lambda plus every station's busy rate."""
    if model.kind == "tandem":
        return model.lam + sum(m * r for m, r in zip(model.mu_vec, model.rho_vec))
    return model.lam + model.n_stations * model.mu * model.rho


def _snapshot_run(model, count, spacing_events, burn_in, seed):
    if spacing_events < 1:
        raise ValueError("spacing_events must be >= 1")
    grid_dt = spacing_events / mean_event_rate(model)
    # overprovision events: the grid is in time, the run length in events
    total = burn_in + int(count * spacing_events * 1.25) + 10_000
    acc = simulate(
        model, total, burn_in, probes=(), seed=seed, snapshot_dt=grid_dt, snapshot_limit=count
    )
    s = acc.snapshots
    if s["q"].shape[0] < count:
        raise RuntimeError(
            f"collected only {s['q'].shape[0]} of {count} snapshots; event budget too small"
        )
    return s


def stationary_samples(model, count, spacing_events, burn_in, seed) -> list:
    """count snapshots after burn-in, spaced spacing_events expected events
    apart on a deterministic time grid (time sampling keeps the marginal
    law time-stationary; event-epoch sampling would oversample busy spells).
    """
    if count == 0:
        return []
    s = _snapshot_run(model, count, spacing_events, burn_in, seed)
    return [
        SystemState(tuple(int(v) for v in s["q"][i]), float(s["r_a"][i]), tuple(s["r_s"][i]), float(s["t"][i]))
        for i in range(s["q"].shape[0])
    ]


def stationary_scaled_totals(model, count, spacing_events, burn_in, seed) -> np.ndarray:
    """Scaled queue totals at snapshots: delta * sum(Q) (or per-station
    delta_i * Q_i columns for the two-station model)."""
    s = _snapshot_run(model, count, spacing_events, burn_in, seed)
    q = s["q"]
    if model.kind == "tandem":
        d = np.array(model.delta_vec)
        return q * d
    return model.delta * q.sum(axis=1)


def write_event_log(model, total_events, seed, path, chunk_events=1 << 16):
    """CSV dump of the event log: time, kind, station, queues, clocks, payload."""
    k = model.n_stations
    qcols = ",".join(f"q{i}_before" for i in range(k))
    with open(path, "w") as fh:
        fh.write(f"time,kind,station,{qcols},r_a_before,payload\n")
        for chunk in iter_chunks(model, seed, total_events, chunk_events):
            kinds = np.where(chunk.kind == ARRIVAL, "arrival", "departure")
            for i in range(len(chunk)):
                qs = ",".join(str(int(v)) for v in chunk.q[i])
                fh.write(
                    f"{chunk.t[i]:.12g},{kinds[i]},{int(chunk.station[i])},{qs},"
                    f"{chunk.r_a[i]:.12g},{chunk.payload[i]:.12g}\n"
                )
