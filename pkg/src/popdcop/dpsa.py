"""Distributed parallel simulated annealing with learned temperature regions.

The root runs a planner that decides what every simulate call looks like:
an optional greedy-baseline bisection over log-temperature, a number of
cross-entropy rounds that contract the temperature distribution, and a
final long annealing run that cools linearly over the learned region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .engine import AgentContext
from .systems import CallSpec, Feedback, ParallelSearchProgram, Planner, linear_temperature

__all__ = [
    "ThetaVector",
    "GbParams",
    "DpsaParams",
    "acceptance_probability",
    "accept_moves",
    "sa_accept_step",
    "scheduler",
    "stratified_samples",
    "sample_temperatures",
    "ce_update",
    "sensitivity_bound",
    "statistically_worse",
    "GreedyBaseline",
    "gb_search",
    "dpsa_planner",
    "DpsaProgram",
    "dpsa_factory",
]

Z99 = 2.576


@dataclass(frozen=True)
class ThetaVector:
    """Temperature distribution: ``uniform`` over ``[lo, hi]`` or ``gaussian`` ``(mu, sigma)``."""

    kind: Literal["uniform", "gaussian"]
    a: float
    b: float

    def __post_init__(self):
        if self.kind == "uniform":
            if not (0 < self.a <= self.b):
                raise ValueError(f"uniform theta needs 0 < T_min <= T_max, got {self.a}, {self.b}")
        elif self.kind == "gaussian":
            if self.b < 0:
                raise ValueError("gaussian sigma must be non-negative")
        else:
            raise ValueError(f"unknown distribution {self.kind!r}")

    @classmethod
    def uniform(cls, t_min: float, t_max: float) -> "ThetaVector":
        return cls("uniform", float(t_min), float(t_max))

    @classmethod
    def gaussian(cls, mu: float, sigma: float) -> "ThetaVector":
        return cls("gaussian", float(mu), float(sigma))

    def region(self, floor: float = 1e-3) -> tuple[float, float]:
        """Temperature interval used by the final cooling run."""
        if self.kind == "uniform":
            return self.a, self.b
        return max(self.a - self.b, floor), max(self.a + self.b, floor)

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b])


@dataclass(frozen=True)
class GbParams:
    enabled: bool = False
    l_min: float = -18.0
    l_max: float = 18.0
    width: float = 1.0
    max_rounds: int = 64
    epsilon_floor: float = 1e-3


@dataclass(frozen=True)
class DpsaParams:
    K: int = 10
    R_max: int = 12
    S_max: int = 1
    S_len: int = 100
    G: int = 3
    learn_rate: float = 0.5
    sensitivity: float = 0.01
    theta: ThetaVector = field(default_factory=lambda: ThetaVector.uniform(1e-3, 1e3))
    gb: GbParams = field(default_factory=GbParams)
    total_iterations: int = 1000

    def __post_init__(self):
        if not 1 <= self.G <= self.K:
            raise ValueError("need 1 <= G <= K")
        if self.S_len < 1 or self.S_max < 1:
            raise ValueError("S_len and S_max must be at least 1")
        if not 0 < self.learn_rate <= 1:
            raise ValueError("learn_rate must lie in (0, 1]")
        if self.sensitivity < 0:
            raise ValueError("sensitivity must be non-negative")

    @classmethod
    def from_dict(cls, cfg: dict) -> "DpsaParams":
        cfg = dict(cfg)
        th = cfg.pop("theta", None)
        gb = cfg.pop("gb", None)
        params = cls(**{k: v for k, v in cfg.items() if k in cls.__dataclass_fields__})
        if th is not None:
            kind = th.get("kind", "uniform")
            theta = (
                ThetaVector.uniform(th["lo"], th["hi"])
                if kind == "uniform"
                else ThetaVector.gaussian(th["mu"], th["sigma"])
            )
            params = replace(params, theta=theta)
        if gb is not None:
            params = replace(params, gb=GbParams(**gb))
        return params


# -- annealing step ----------------------------------------------------------


def acceptance_probability(gain, temperature):
    """``min(1, exp(gain / t))``; at ``t == 0`` only non-negative gains pass."""
    gain = np.asarray(gain, dtype=np.float64)
    t = np.asarray(temperature, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        p = np.where(gain >= 0, 1.0, np.exp(np.minimum(gain / np.where(t > 0, t, 1.0), 0.0)))
    p = np.where((t <= 0) & (gain < 0), 0.0, p)
    return p if p.ndim else float(p)


def accept_moves(gain: np.ndarray, temps: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorised acceptance test given uniform draws ``u``."""
    accept = gain >= 0
    worse = ~accept
    if worse.any():
        t = temps[worse]
        hot = t > 0
        p = np.exp(gain[worse] / np.where(hot, t, 1.0))
        accept[worse] = hot & (u[worse] < p)
    return accept


def sa_accept_step(
    value: int, candidate: int, gain: float, temperature: float, rng: np.random.Generator
) -> int:
    """Move to ``candidate`` with the annealing acceptance probability.

    ``gain`` is the local improvement (old cost minus new cost).
    """
    p = acceptance_probability(gain, temperature)
    if p >= 1.0 or rng.random() < p:
        return candidate
    return value


def scheduler(
    l: int,
    k: int,
    is_learning: bool,
    temps,
    region: tuple[float, float],
    length: int,
) -> float:
    """Temperature for system ``k`` (1-based) at iteration ``l``.

    Learning calls hold ``temps[k-1]`` constant; the final call cools
    linearly from ``T_max`` to ``T_min``.
    """
    if is_learning:
        return float(temps[k - 1])
    return linear_temperature(l, length, region[0], region[1])


def stratified_samples(theta: ThetaVector, K: int) -> np.ndarray:
    """``K`` evenly spaced temperatures covering ``[T_min, T_max]``."""
    if theta.kind != "uniform":
        raise ValueError("stratified sampling needs a uniform theta")
    if K < 2:
        raise ValueError("stratified sampling needs K >= 2")
    k = np.arange(K)
    return theta.a + (theta.b - theta.a) * k / (K - 1)


def sample_temperatures(theta: ThetaVector, K: int, rng: np.random.Generator) -> np.ndarray:
    if theta.kind == "uniform":
        if K == 1:
            return np.array([(theta.a + theta.b) / 2])
        return stratified_samples(theta, K)
    draws = rng.normal(theta.a, theta.b, size=K)
    return np.maximum(draws, 1e-6)


def ce_update(
    theta: ThetaVector,
    T,
    E,
    G: int,
    gamma: float = 0.0,
    learn_rate: float = 0.5,
) -> ThetaVector:
    """One cross-entropy step on the temperature distribution.

    Every sample whose feedback is within ``gamma`` of the ``G``-th best is
    selected; ``theta`` moves towards the selection's bounds (uniform) or
    mean and spread (gaussian) by ``learn_rate``.
    """
    T = np.asarray(T, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if T.shape != E.shape:
        raise ValueError("T and E must have the same length")
    threshold = np.sort(E)[G - 1] + gamma
    selected = T[E <= threshold]
    if theta.kind == "uniform":
        new = np.array([selected.min(), selected.max()])
    else:
        new = np.array([selected.mean(), selected.std()])
    a, b = (1 - learn_rate) * theta.as_array() + learn_rate * new
    if theta.kind == "uniform":
        return ThetaVector("uniform", float(a), float(max(a, b)))
    return ThetaVector("gaussian", float(a), float(b))


def sensitivity_bound(sensitivity: float, best_cost: float) -> float:
    return sensitivity * best_cost


def _ci(sample: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(sample))
    if len(sample) < 2:
        return m, m
    half = Z99 * float(np.std(sample, ddof=1)) / math.sqrt(len(sample))
    return m - half, m + half


def statistically_worse(E, B) -> bool:
    """True when the 99% interval of ``mean(E)`` lies wholly above that of ``mean(B)``."""
    e_lo, _ = _ci(np.asarray(E, dtype=np.float64))
    _, b_hi = _ci(np.asarray(B, dtype=np.float64))
    return e_lo > b_hi


# -- greedy baseline -------------------------------------------------------------


class GreedyBaseline:
    """Bisection over log10-temperature against the zero-temperature baseline."""

    def __init__(
        self,
        l_min: float = -18.0,
        l_max: float = 18.0,
        width: float = 1.0,
        max_rounds: int = 64,
    ):
        if not l_min < l_max:
            raise ValueError("need l_min < l_max")
        self.l_min = float(l_min)
        self.l_max = float(l_max)
        self.width = width
        self.max_rounds = max_rounds
        self.rounds = 0
        self.baseline: np.ndarray | None = None

    @property
    def midpoint(self) -> float:
        return (self.l_min + self.l_max) / 2

    @property
    def narrow(self) -> bool:
        return self.l_max - self.l_min <= self.width

    @property
    def finished(self) -> bool:
        return self.narrow or self.rounds >= self.max_rounds

    def next_temperature(self) -> float:
        return 10.0 ** self.midpoint

    def observe(self, E) -> None:
        if self.baseline is None:
            raise RuntimeError("set the zero-temperature baseline first")
        mid = self.midpoint
        if statistically_worse(E, self.baseline):
            self.l_max = mid
        else:
            self.l_min = mid
        self.rounds += 1

    def theta(self, epsilon_floor: float = 1e-3) -> ThetaVector:
        ght = 10.0 ** self.midpoint
        return ThetaVector.uniform(min(epsilon_floor, ght), ght)


def gb_search(
    feedback: Callable[[float], np.ndarray],
    l_min: float = -18.0,
    l_max: float = 18.0,
    width: float = 1.0,
    max_rounds: int = 64,
    epsilon_floor: float = 1e-3,
) -> tuple[ThetaVector, GreedyBaseline]:
    """Run the bisection with ``feedback(temperature) -> per-system costs``."""
    gb = GreedyBaseline(l_min, l_max, width, max_rounds)
    gb.baseline = np.asarray(feedback(0.0))
    while not gb.finished:
        gb.observe(feedback(gb.next_temperature()))
    return gb.theta(epsilon_floor), gb


# -- distributed program ---------------------------------------------------------


def dpsa_planner(params: DpsaParams, rng: np.random.Generator) -> Planner:
    """Root-side schedule of simulate calls; receives per-call feedback."""
    K = params.K
    budget = params.total_iterations
    used = 0
    theta = params.theta
    r_max = params.R_max

    def learning(temps) -> CallSpec:
        return CallSpec(params.S_len, True, "constant", tuple(float(t) for t in temps))

    def affordable(n_calls: int) -> bool:
        return used + n_calls * params.S_len <= budget

    if params.gb.enabled and affordable(1):
        gbp = params.gb
        gb = GreedyBaseline(gbp.l_min, gbp.l_max, gbp.width, gbp.max_rounds)
        fb = yield learning([0.0] * K)
        used += params.S_len
        gb.baseline = fb.best_per_system
        while not gb.finished and affordable(1):
            fb = yield learning([gb.next_temperature()] * K)
            used += params.S_len
            gb.observe(fb.best_per_system)
        theta = gb.theta(gbp.epsilon_floor)
        if gb.narrow:
            r_max = 0

    for _ in range(r_max):
        if not affordable(params.S_max):
            break
        T = sample_temperatures(theta, K, rng)
        E = np.zeros(K)
        best = 0
        for _ in range(params.S_max):
            fb = yield learning(T)
            used += params.S_len
            E += fb.best_per_system / params.S_max
            best = fb.best_overall
        gamma = sensitivity_bound(params.sensitivity, best)
        theta = ce_update(theta, T, E, params.G, gamma, params.learn_rate)
        if E.max() - E.min() <= gamma:
            break

    remaining = budget - used
    if remaining > 0:
        yield CallSpec(remaining, False, "linear", region=theta.region())


class DpsaProgram(ParallelSearchProgram):
    def __init__(self, ctx: AgentContext, params: DpsaParams):
        planner = dpsa_planner(params, ctx.rng("planner")) if ctx.is_root else None
        super().__init__(ctx, params.K, planner)
        self.params = params

    def decide(self, l: int, temps: np.ndarray) -> np.ndarray:
        candidates = self.random_values(self.K)
        gain = self.current_costs - self.local_costs(candidates)
        accept = accept_moves(gain, temps, self.rng.random(self.K))
        return np.where(accept, candidates, self.x)


def dpsa_factory(params: DpsaParams):
    return lambda ctx: DpsaProgram(ctx, params)
