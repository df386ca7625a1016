"""Parametric clock distributions with exact low-order moments.

A "clock" is a positive random countdown driving state transitions
(interarrival or service times).  Every supported family has closed-form
moments up to order 3, a squared coefficient of variation, and a
reproducible vectorized sampler backed by a caller-owned numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

__all__ = [
    "Clock",
    "Exponential",
    "Erlang",
    "HyperExponential",
    "Uniform",
    "LogNormal",
    "Deterministic",
    "clock_from_config",
    "clock_to_config",
    "balanced_hyperexp",
    "substreams",
]

_QUAD_RTOL = 1e-8


def substreams(seed, n):
    """n independent generators spawned from one master seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


class Clock:
    """Base class: positive random variable with finite third moment."""

    family = "abstract"

    def moment(self, m: int) -> float:
        raise NotImplementedError

    def mean(self) -> float:
        return self.moment(1)

    def scv(self) -> float:
        """Squared coefficient of variation, Var/mean^2.

        Computed as moment(2)/moment(1)^2 - 1 so that the identity with
        the closed-form moments holds exactly, not just to rounding.
        """
        m1 = self.moment(1)
        return self.moment(2) / (m1 * m1) - 1.0

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.sample_many(rng, 1)[0])

    def scaled(self, c: float) -> "Clock":
        """Distribution of c*X (used to retune a model to a target load)."""
        raise NotImplementedError

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def abs_centered_cubed(self) -> float:
        """E|1 - X/EX|^3, the third absolute moment of the normalized clock.

        Families without a convenient closed form integrate the density
        adaptively, splitting at the kink x = EX.
        """
        mu = self.mean()

        def integrand(x):
            return abs(1.0 - x / mu) ** 3 * self._pdf(x)

        lo, err_lo = integrate.quad(integrand, 0.0, mu, epsrel=_QUAD_RTOL, epsabs=0.0, limit=200)
        hi, err_hi = integrate.quad(integrand, mu, np.inf, epsrel=_QUAD_RTOL, epsabs=1e-14, limit=200)
        return lo + hi

    @staticmethod
    def _check_m(m: int) -> None:
        if m not in (1, 2, 3):
            raise ValueError(f"moment order must be 1, 2 or 3, got {m}")


@dataclass(frozen=True)
class Exponential(Clock):
    rate: float
    family = "exponential"

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def moment(self, m):
        self._check_m(m)
        return math.factorial(m) / self.rate**m

    def sample_many(self, rng, n):
        return rng.exponential(1.0 / self.rate, n)

    def scaled(self, c):
        return Exponential(self.rate / c)

    def abs_centered_cubed(self):
        # E|1-Y|^3 for Y ~ Exp(1): split at 1 gives (6/e - 2) + 6/e.
        return 12.0 / math.e - 2.0

    def _pdf(self, x):
        return self.rate * np.exp(-self.rate * np.asarray(x))


@dataclass(frozen=True)
class Erlang(Clock):
    k: int
    rate: float
    family = "erlang"

    def __post_init__(self):
        if self.k < 1 or self.k != int(self.k):
            raise ValueError(f"shape k must be a positive integer, got {self.k}")
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def moment(self, m):
        self._check_m(m)
        num = 1.0
        for j in range(m):
            num *= self.k + j
        return num / self.rate**m

    def sample_many(self, rng, n):
        return rng.gamma(float(self.k), 1.0 / self.rate, n)

    def scaled(self, c):
        return Erlang(self.k, self.rate / c)

    def _pdf(self, x):
        x = np.asarray(x, dtype=float)
        logp = (
            self.k * math.log(self.rate)
            + (self.k - 1) * np.log(np.where(x > 0, x, 1.0))
            - self.rate * x
            - math.lgamma(self.k)
        )
        return np.where(x > 0, np.exp(logp), 0.0)


@dataclass(frozen=True)
class HyperExponential(Clock):
    probs: tuple
    rates: tuple
    family = "hyperexp"

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.probs) != len(self.rates) or not self.probs:
            raise ValueError("probs and rates must be nonempty and of equal length")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got {self.probs}")
        if any(r <= 0 for r in self.rates):
            raise ValueError(f"rates must be positive, got {self.rates}")

    def moment(self, m):
        self._check_m(m)
        return sum(p * math.factorial(m) / r**m for p, r in zip(self.probs, self.rates))

    def sample_many(self, rng, n):
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, rng.random(n), side="right")
        idx = np.minimum(idx, len(self.rates) - 1)
        return rng.exponential(1.0, n) / np.asarray(self.rates)[idx]

    def scaled(self, c):
        return HyperExponential(self.probs, tuple(r / c for r in self.rates))

    def _pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for p, r in zip(self.probs, self.rates):
            out = out + p * r * np.exp(-r * x)
        return out


@dataclass(frozen=True)
class Uniform(Clock):
    a: float
    b: float
    family = "uniform"

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ValueError(f"need 0 <= a < b, got a={self.a}, b={self.b}")

    def moment(self, m):
        self._check_m(m)
        return (self.b ** (m + 1) - self.a ** (m + 1)) / ((m + 1) * (self.b - self.a))

    def sample_many(self, rng, n):
        return rng.uniform(self.a, self.b, n)

    def scaled(self, c):
        return Uniform(self.a * c, self.b * c)

    def abs_centered_cubed(self):
        # closed form: the mean lies inside [a, b], split the quartic there
        mu = 0.5 * (self.a + self.b)
        lo = (1.0 - self.a / mu) ** 4
        hi = (self.b / mu - 1.0) ** 4
        return mu * (lo + hi) / (4.0 * (self.b - self.a))

    def _pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)


@dataclass(frozen=True)
class LogNormal(Clock):
    """Parameters are the location and scale of the underlying normal."""

    location: float
    scale: float
    family = "lognormal"

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def moment(self, m):
        self._check_m(m)
        return math.exp(m * self.location + 0.5 * m * m * self.scale**2)

    def sample_many(self, rng, n):
        return rng.lognormal(self.location, self.scale, n)

    def scaled(self, c):
        return LogNormal(self.location + math.log(c), self.scale)

    def _pdf(self, x):
        x = np.asarray(x, dtype=float)
        safe = np.where(x > 0, x, 1.0)
        z = (np.log(safe) - self.location) / self.scale
        val = np.exp(-0.5 * z * z) / (safe * self.scale * math.sqrt(2 * math.pi))
        return np.where(x > 0, val, 0.0)


@dataclass(frozen=True)
class Deterministic(Clock):
    d: float
    family = "deterministic"

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError(f"point mass must be positive, got {self.d}")

    def moment(self, m):
        self._check_m(m)
        return self.d**m

    def sample_many(self, rng, n):
        return np.full(n, self.d)

    def scaled(self, c):
        return Deterministic(self.d * c)

    def abs_centered_cubed(self):
        return 0.0


_FAMILIES = {
    "exponential": (Exponential, ("rate",)),
    "erlang": (Erlang, ("k", "rate")),
    "hyperexp": (HyperExponential, ("probs", "rates")),
    "uniform": (Uniform, ("a", "b")),
    "lognormal": (LogNormal, ("location", "scale")),
    "deterministic": (Deterministic, ("d",)),
}


def clock_from_config(cfg: dict, path: str = "clock") -> Clock:
    """Parse {"family": ..., <params>} rejecting unknown keys with their path."""
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: expected an object, got {type(cfg).__name__}")
    if "family" not in cfg:
        raise ValueError(f"{path}.family: missing")
    fam = cfg["family"]
    if fam not in _FAMILIES:
        raise ValueError(f"{path}.family: unknown family {fam!r}; expected one of {sorted(_FAMILIES)}")
    cls, fields = _FAMILIES[fam]
    extra = set(cfg) - set(fields) - {"family"}
    if extra:
        raise ValueError(f"{path}.{sorted(extra)[0]}: unknown key for family {fam!r}")
    missing = [f for f in fields if f not in cfg]
    if missing:
        raise ValueError(f"{path}.{missing[0]}: missing")
    kwargs = {}
    for f in fields:
        v = cfg[f]
        kwargs[f] = tuple(v) if isinstance(v, (list, tuple)) else v
    return cls(**kwargs)


def clock_to_config(clock: Clock) -> dict:
    cls, fields = _FAMILIES[clock.family]
    out = {"family": clock.family}
    for f in fields:
        v = getattr(clock, f)
        out[f] = list(v) if isinstance(v, tuple) else v
    return out


def balanced_hyperexp(mean: float, scv: float) -> HyperExponential:
    """Two-phase hyperexponential with balanced means matching (mean, scv).

    Balanced means: p1/r1 == p2/r2.  Requires scv > 1.
    """
    if scv <= 1:
        raise ValueError(f"balanced hyperexponential needs scv > 1, got {scv}")
    s = math.sqrt((scv - 1.0) / (scv + 1.0))
    p1 = 0.5 * (1.0 + s)
    p2 = 1.0 - p1
    return HyperExponential((p1, p2), (2.0 * p1 / mean, 2.0 * p2 / mean))
