"""Reference local-search agents: DSA-C and fixed-schedule DSAN.

Both run as ``K`` independent copies under Modified-ALS, so they report the
same anytime cost as DPSA and can be compared on equal footing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dpsa import acceptance_probability
from .engine import AgentContext
from .systems import CallSpec, ParallelSearchProgram, Planner

__all__ = [
    "DsaParams",
    "DsanParams",
    "best_response",
    "dsa_c_step",
    "dsan_temperature",
    "dsan_fixed_step",
    "DsaProgram",
    "DsanProgram",
    "dsa_factory",
    "dsan_factory",
]


@dataclass(frozen=True)
class DsaParams:
    p: float = 0.8
    parallel_instances: int = 10
    total_iterations: int = 1000

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("DSA activation probability must lie in [0, 1]")
        if self.parallel_instances < 1:
            raise ValueError("need at least one parallel instance")


@dataclass(frozen=True)
class DsanParams:
    parallel_instances: int = 10
    total_iterations: int = 1000
    max_iteration: int | None = None

    def __post_init__(self):
        if self.parallel_instances < 1:
            raise ValueError("need at least one parallel instance")


def best_response(costs) -> int:
    """Index of the cheapest value, lowest index on ties."""
    return int(np.argmin(costs))


def dsa_c_step(value: int, costs, p: float, rng: np.random.Generator) -> int:
    """One DSA-C decision given the local cost of every own value.

    The best response is taken with probability ``p`` whenever it does not
    make things worse, so sideways moves are allowed.
    """
    costs = np.asarray(costs)
    best = best_response(costs)
    if costs[best] <= costs[value] and rng.random() < p:
        return best
    return value


def dsan_temperature(i: int, max_iteration: int) -> float:
    return max_iteration / float(i * i)


def dsan_fixed_step(
    value: int, costs, i: int, max_iteration: int, rng: np.random.Generator
) -> int:
    """Random candidate accepted with ``min(1, exp(gain / t_i))``."""
    costs = np.asarray(costs)
    candidate = int(rng.integers(len(costs)))
    gain = float(costs[value] - costs[candidate])
    p = acceptance_probability(gain, dsan_temperature(i, max_iteration))
    if p >= 1.0 or rng.random() < p:
        return candidate
    return value


def _single_call(spec: CallSpec) -> Planner:
    yield spec


class DsaProgram(ParallelSearchProgram):
    def __init__(self, ctx: AgentContext, params: DsaParams):
        spec = CallSpec(params.total_iterations, False, "none")
        super().__init__(ctx, params.parallel_instances, _single_call(spec))
        self.p = params.p

    def decide(self, l: int, temps: np.ndarray) -> np.ndarray:
        # the best response never costs more than the current value, so
        # only the activation draw gates the move (sideways moves allowed)
        best = self.all_local_costs().argmin(axis=0)
        active = self.rng.random(self.K) < self.p
        return np.where(active, best, self.x)


class DsanProgram(ParallelSearchProgram):
    def __init__(self, ctx: AgentContext, params: DsanParams):
        length = params.total_iterations
        spec = CallSpec(length, False, "dsan")
        super().__init__(ctx, params.parallel_instances, _single_call(spec))
        self.max_iteration = params.max_iteration or length

    def temperatures(self, l: int) -> float:  # type: ignore[override]
        return dsan_temperature(l, self.max_iteration)

    def decide(self, l: int, temps: float) -> np.ndarray:  # type: ignore[override]
        candidates = self.random_values(self.K)
        gain = self.current_costs - self.local_costs(candidates)
        u = self.rng.random(self.K)
        accept = (gain >= 0) | (u < np.exp(np.minimum(gain, 0) / temps))
        return np.where(accept, candidates, self.x)


def dsa_factory(params: DsaParams):
    return lambda ctx: DsaProgram(ctx, params)


def dsan_factory(params: DsanParams):
    return lambda ctx: DsanProgram(ctx, params)
