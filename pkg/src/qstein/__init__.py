"""Simulation and verification workbench for steady-state diffusion
approximations of queueing systems driven by general (non-exponential)
clocks: exact stationary-identity checks, adjoint-relation residuals,
explicit error bounds, and empirical Wasserstein comparisons."""

from .clocks import (
    Clock,
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
from .models import GG1, JSQ, SystemState, Tandem2, UnstableModelError, model_from_config
from .palm import EstimateCI, EventProbe, PalmAccumulators, TimeProbe, WindowProbe
from .engine import EngineStreams, EventRecord, simulate, stationary_samples, step

__all__ = [
    "Clock",
    "Exponential",
    "Erlang",
    "HyperExponential",
    "Uniform",
    "LogNormal",
    "Deterministic",
    "balanced_hyperexp",
    "clock_from_config",
    "clock_to_config",
    "substreams",
    "GG1",
    "JSQ",
    "Tandem2",
    "SystemState",
    "UnstableModelError",
    "model_from_config",
    "EstimateCI",
    "TimeProbe",
    "EventProbe",
    "WindowProbe",
    "PalmAccumulators",
    "EngineStreams",
    "EventRecord",
    "simulate",
    "stationary_samples",
    "step",
]
