"""Queueing model specifications and the full Markov state.

Three models are supported: a single FCFS server fed by a renewal stream,
a join-the-shortest-queue bank of n identical servers, and two stations in
series.  Rates, loads and spare capacities are derived from the clocks.
"""

from __future__ import annotations

from dataclasses import dataclass

from .clocks import Clock, Deterministic, clock_from_config, clock_to_config

__all__ = ["GG1", "JSQ", "Tandem2", "SystemState", "UnstableModelError", "model_from_config", "model_to_config"]


class UnstableModelError(ValueError):
    pass


@dataclass(frozen=True)
class SystemState:
    """Snapshot of the Markov state: queues plus residual clocks.

    An idle server carries the pre-sampled service time of the next customer
    to start; that clock does not decay while the server is idle.
    """

    queues: tuple
    r_arrival: float
    r_service: tuple
    clock_time: float


def _check_stable(rho, what):
    if rho >= 1.0:
        raise UnstableModelError(f"unstable model: {what} = {rho:.6g} >= 1")


@dataclass(frozen=True)
class GG1:
    arrival: Clock
    service: Clock
    kind = "gg1"

    def __post_init__(self):
        _check_stable(self.rho, "rho")

    @property
    def lam(self):
        return 1.0 / self.arrival.mean()

    @property
    def mu(self):
        return 1.0 / self.service.mean()

    @property
    def rho(self):
        return self.lam / self.mu

    @property
    def delta(self):
        return 1.0 - self.rho

    @property
    def n_stations(self):
        return 1

    @property
    def services(self):
        return (self.service,)

    @property
    def tie_risk(self):
        return isinstance(self.arrival, Deterministic) and isinstance(self.service, Deterministic)


@dataclass(frozen=True)
class JSQ:
    n: int
    arrival: Clock
    service: Clock
    kind = "jsq"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"need at least one server, got n={self.n}")
        _check_stable(self.rho, "rho")

    @property
    def lam(self):
        return 1.0 / self.arrival.mean()

    @property
    def mu(self):
        return 1.0 / self.service.mean()

    @property
    def rho(self):
        return self.lam / (self.n * self.mu)

    @property
    def delta(self):
        return 1.0 - self.rho

    @property
    def n_stations(self):
        return self.n

    @property
    def services(self):
        return (self.service,) * self.n

    @property
    def tie_risk(self):
        det_s = isinstance(self.service, Deterministic)
        det_a = isinstance(self.arrival, Deterministic)
        return (det_a and det_s) or (det_s and self.n > 1)


@dataclass(frozen=True)
class Tandem2:
    arrival: Clock
    service1: Clock
    service2: Clock
    kind = "tandem"

    def __post_init__(self):
        _check_stable(self.rho_vec[0], "rho_1")
        _check_stable(self.rho_vec[1], "rho_2")

    @property
    def lam(self):
        return 1.0 / self.arrival.mean()

    @property
    def mu_vec(self):
        return (1.0 / self.service1.mean(), 1.0 / self.service2.mean())

    @property
    def rho_vec(self):
        mu1, mu2 = self.mu_vec
        return (self.lam / mu1, self.lam / mu2)

    @property
    def delta_vec(self):
        r1, r2 = self.rho_vec
        return (1.0 - r1, 1.0 - r2)

    @property
    def n_stations(self):
        return 2

    @property
    def services(self):
        return (self.service1, self.service2)

    @property
    def tie_risk(self):
        n_det = sum(isinstance(c, Deterministic) for c in (self.arrival, self.service1, self.service2))
        return n_det >= 2


def model_from_config(cfg: dict, path: str = "model") -> object:
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: expected an object")
    kind = cfg.get("kind")
    if kind == "gg1":
        allowed = {"kind", "arrival", "service"}
    elif kind == "jsq":
        allowed = {"kind", "n", "arrival", "service"}
    elif kind == "tandem":
        allowed = {"kind", "arrival", "service1", "service2"}
    else:
        raise ValueError(f"{path}.kind: expected one of ['gg1', 'jsq', 'tandem'], got {kind!r}")
    extra = set(cfg) - allowed
    if extra:
        raise ValueError(f"{path}.{sorted(extra)[0]}: unknown key for kind {kind!r}")
    missing = [k for k in allowed if k not in cfg]
    if missing:
        raise ValueError(f"{path}.{sorted(missing)[0]}: missing")
    if kind == "gg1":
        return GG1(clock_from_config(cfg["arrival"], f"{path}.arrival"), clock_from_config(cfg["service"], f"{path}.service"))
    if kind == "jsq":
        return JSQ(int(cfg["n"]), clock_from_config(cfg["arrival"], f"{path}.arrival"), clock_from_config(cfg["service"], f"{path}.service"))
    return Tandem2(
        clock_from_config(cfg["arrival"], f"{path}.arrival"),
        clock_from_config(cfg["service1"], f"{path}.service1"),
        clock_from_config(cfg["service2"], f"{path}.service2"),
    )


def model_to_config(model) -> dict:
    if model.kind == "gg1":
        return {"kind": "gg1", "arrival": clock_to_config(model.arrival), "service": clock_to_config(model.service)}
    if model.kind == "jsq":
        return {"kind": "jsq", "n": model.n, "arrival": clock_to_config(model.arrival), "service": clock_to_config(model.service)}
    return {
        "kind": "tandem",
        "arrival": clock_to_config(model.arrival),
        "service1": clock_to_config(model.service1),
        "service2": clock_to_config(model.service2),
    }
