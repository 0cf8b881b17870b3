"""Anytime evolutionary DCOP search.

Each agent holds a small population of complete assignments. In every
iteration it mutates its own variable in a copy of each individual, keeps
a fitness-proportionate sample of the union, and migrates individuals to
its neighbours. The best individual anyone has seen is reported up the BFS
tree and, once the root confirms it as a new versioned global best,
broadcast down so that all agents switch to it at the same iteration.

Populations are stored as a ``(P, n + 1)`` matrix: one individual per row,
``-1`` where an agent is still unassigned during initialisation, and the
fitness in the last column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import AgentContext, AgentProgram, Envelope, Message, ProtocolError

__all__ = [
    "UNASSIGNED",
    "Individual",
    "AedParams",
    "AnytimeRegistry",
    "merge",
    "merge_sets",
    "mutation_distribution",
    "selection_distribution",
    "mutation_costs",
    "mutate",
    "reproduce",
    "reinsert",
    "migrate",
    "AedProgram",
    "aed_factory",
]

UNASSIGNED = -1


@dataclass(frozen=True, eq=False)
class Individual:
    values: np.ndarray
    fitness: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "fitness", int(self.fitness))

    @classmethod
    def empty(cls, n_agents: int) -> "Individual":
        return cls(np.full(n_agents, UNASSIGNED), 0)

    @property
    def complete(self) -> bool:
        return bool((self.values != UNASSIGNED).all())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Individual):
            return NotImplemented
        return self.fitness == other.fitness and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"Individual({self.values.tolist()}, fitness={self.fitness})"


@dataclass(frozen=True)
class AedParams:
    IN: int = 10
    ER: int = 1
    alpha: float = 3.0
    beta: float = 3.0
    epsilon: float = 1.0
    iterations: int = 1000

    def __post_init__(self):
        if self.IN < 1 or self.ER < 1:
            raise ValueError("IN and ER must be at least 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")

    @classmethod
    def from_dict(cls, cfg: dict) -> "AedParams":
        return cls(**{k: v for k, v in cfg.items() if k in cls.__dataclass_fields__})


# -- population operators ------------------------------------------------------


def _merge_arrays(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    both = (v1 != UNASSIGNED) & (v2 != UNASSIGNED)
    if (v1[both] != v2[both]).any():
        raise ProtocolError("merged individuals disagree on a shared variable")
    return np.where(v1 != UNASSIGNED, v1, v2)


def merge(a: Individual, b: Individual) -> Individual:
    """Union of two partial assignments; fitness values add."""
    return Individual(_merge_arrays(a.values, b.values), a.fitness + b.fitness)


def merge_sets(s1: Sequence[Individual], s2: Sequence[Individual]) -> list[Individual]:
    """Index-wise merge of two equally sized ordered populations."""
    if len(s1) != len(s2):
        raise ValueError("populations must have the same size to merge")
    return [merge(a, b) for a, b in zip(s1, s2)]


def _scores(costs: np.ndarray, epsilon: float, exponent: float) -> np.ndarray:
    """Normalised advantage ``(|worst - c| + eps) / (|worst - best| + eps)`` raised to ``exponent``.

    Works row-wise on the last axis and returns probabilities. ``worst``
    bounds every cost from above, so the absolute values are plain
    differences.
    """
    c = np.asarray(costs, dtype=np.float64)
    worst = np.maximum.reduce(c, axis=-1, keepdims=True)
    best = np.minimum.reduce(c, axis=-1, keepdims=True)
    w = (worst - c + epsilon) / (worst - best + epsilon)
    if exponent != 1:
        w = w**exponent
    return w / np.add.reduce(w, axis=-1, keepdims=True)


def mutation_distribution(costs, beta: float, epsilon: float) -> np.ndarray:
    """Probability of each own value given its mutation cost (last axis)."""
    return _scores(costs, epsilon, beta)


def selection_distribution(fitness, alpha: float, epsilon: float) -> np.ndarray:
    """Fitness-proportionate survival probability of each individual."""
    fitness = np.asarray(fitness)
    if fitness.size == 0:
        raise ValueError("cannot select from an empty population")
    return _scores(fitness, epsilon, alpha)


def mutation_costs(ctx: AgentContext, values: np.ndarray, by_nbr: np.ndarray | None = None) -> np.ndarray:
    """``(P, |D_i|)`` cost of every own value in every individual.

    Includes the change in global-cap penalty, so differences between
    entries equal differences in global cost exactly.
    """
    tables = by_nbr if by_nbr is not None else ctx.stacked_tables.transpose(0, 2, 1)
    costs = np.add.reduce(tables[ctx.neighbor_rows.T, values[:, ctx.neighbor_array]], axis=1)
    cap = ctx.global_cap
    if cap is not None and cap.penalty:
        counts = _histograms(values, ctx.domain_size)
        counts[np.arange(len(values)), values[:, ctx.agent_id]] -= 1
        extra = np.maximum(counts + 1 - cap.cap, 0) - np.maximum(counts - cap.cap, 0)
        costs = costs + cap.penalty * extra
    return costs


def _histograms(values: np.ndarray, d: int) -> np.ndarray:
    """``(P, d)`` count of agents on each of the values ``0..d-1`` per row."""
    width = max(int(values.max()) + 1, d)
    offsets = (np.arange(len(values)) * width)[:, None]
    flat = np.bincount((values + offsets).ravel(), minlength=len(values) * width)
    return flat.reshape(len(values), width)[:, :d]


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cum = np.add.accumulate(probs, axis=1)
    u = rng.random(len(probs))[:, None] * cum[:, -1:]
    return np.minimum(np.add.reduce(u >= cum, axis=1), probs.shape[1] - 1)


def mutate(
    ctx: AgentContext,
    values: np.ndarray,
    params: AedParams,
    rng: np.random.Generator,
    by_nbr: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """New own value for every individual and the resulting fitness change."""
    costs = mutation_costs(ctx, values, by_nbr)
    probs = mutation_distribution(costs, params.beta, params.epsilon)
    new = _sample_rows(probs, rng)
    rows = np.arange(len(values))
    return new, costs[rows, new] - costs[rows, values[:, ctx.agent_id]]


def reproduce(
    ctx: AgentContext,
    values: np.ndarray,
    fitness: np.ndarray,
    params: AedParams,
    rng: np.random.Generator,
    by_nbr: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mutate this agent's variable in a copy of every individual."""
    new, delta = mutate(ctx, values, params, rng, by_nbr)
    child = values.copy()
    child[:, ctx.agent_id] = new
    return child, fitness + delta


def reinsert(
    fitness: np.ndarray, target: int, alpha: float, epsilon: float, rng: np.random.Generator
) -> np.ndarray:
    """Indices of ``target`` survivors drawn with replacement."""
    cum = np.add.accumulate(selection_distribution(fitness, alpha, epsilon))
    idx = np.searchsorted(cum, rng.random(target) * cum[-1], side="right")
    return np.minimum(idx, len(cum) - 1)


def migrate(size: int, n_neighbors: int, ER: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of ``size = n_neighbors * ER`` indices into equal blocks."""
    if size != n_neighbors * ER:
        raise ValueError("population size must equal |N| * ER before migration")
    perm = rng.permutation(size)
    return [perm[k * ER : (k + 1) * ER] for k in range(n_neighbors)]


# -- messages --------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, slots=True, eq=False)
class InitValuesMsg(Message):
    kind = "init_values"
    values: np.ndarray

    @property
    def size(self) -> int:
        return len(self.values)


@dataclass(frozen=True, slots=True, eq=False)
class PopulationMsg(Message):
    """A block of individuals: INIT partials, the final INIT broadcast, or migrants.

    ``rows`` is read-only with one individual per row and its fitness in
    the last column.
    """

    kind = "population"
    rows: np.ndarray
    start: int = -1

    @property
    def size(self) -> int:
        return self.rows.size


@dataclass(frozen=True, slots=True, eq=False)
class FoundMsg(Message):
    kind = "found"
    individual: Individual
    finder: int

    @property
    def size(self) -> int:
        return len(self.individual.values) + 2


@dataclass(frozen=True, slots=True, eq=False)
class UpdateMsg(Message):
    kind = "update"
    version: int
    individual: Individual

    @property
    def size(self) -> int:
        return len(self.individual.values) + 2


# -- anytime bookkeeping ---------------------------------------------------------


class AnytimeRegistry:
    """Local best, versioned global bests and the iteration counter."""

    def __init__(self, height: int):
        self.H = height
        self.LB: Individual | None = None
        self.LB_finder: int = -1
        self.GB: dict[int, Individual] = {}
        self.Itr = 0

    def offer(self, ind: Individual, finder: int) -> bool:
        """Replace LB if ``ind`` is strictly better."""
        if self.LB is None or ind.fitness < self.LB.fitness:
            self.LB = ind
            self.LB_finder = finder
            return True
        return False

    def latest(self) -> Individual | None:
        if not self.GB:
            return None
        return self.GB[max(self.GB)]

    def lookup(self, version: int) -> Individual | None:
        """Global best valid at ``version`` (latest version not after it)."""
        keys = [v for v in self.GB if v <= version]
        return self.GB[max(keys)] if keys else None

    def store(self, version: int, ind: Individual) -> None:
        latest = max(self.GB, default=None)
        if latest is not None and version < latest:
            raise ProtocolError(f"global best version {version} arrived after {latest}")
        self.GB[version] = ind

    def prune(self) -> None:
        floor = self.Itr - self.H + 1
        old = sorted(v for v in self.GB if v < floor)
        for v in old[:-1]:
            del self.GB[v]

    def improves(self) -> bool:
        if self.LB is None:
            return False
        gb = self.latest()
        return gb is None or self.LB.fitness < gb.fitness


# -- agent program -----------------------------------------------------------------


class AedProgram(AgentProgram):
    """Per-agent AED state machine.

    Phases ``0 .. start-1`` build the initial population cooperatively.
    Optimisation iteration ``Itr`` (1-based) sends its migrants and anytime
    messages in phase ``start + Itr - 1``; their receipt, and the
    assignment decision for ``Itr``, happen at the start of the next phase.

    The population lives in ``pop``, one individual per row with the
    fitness in the last column.
    """

    def __init__(self, ctx: AgentContext, params: AedParams):
        super().__init__(ctx)
        self.params = params
        self.H = ctx.height
        self.n = ctx.n_agents
        self.rng = ctx.rng("aed")
        self.registry = AnytimeRegistry(self.H)
        self._by_nbr = ctx.stacked_tables.transpose(0, 2, 1)
        self.target = len(ctx.neighbor_ids) * params.ER
        self.pop = np.empty((0, self.n + 1), dtype=np.int64)
        self.start: int | None = None
        self._waiting: set[int] = set(ctx.children)
        self._partial: np.ndarray | None = None
        # observer-visible history
        self.best_log: dict[int, int] = {}
        self.gb_log: dict[int, int] = {}
        self.decision_itr = 0
        self.held_cost: int | None = None

    @property
    def values(self) -> np.ndarray:
        return self.pop[:, : self.n]

    @property
    def fitness(self) -> np.ndarray:
        return self.pop[:, self.n]

    # -- INIT ----------------------------------------------------------------
    def _init_step(self, phase: int, inbox: Sequence[Envelope]) -> list[tuple[int, Message]]:
        ctx = self.ctx
        out: list[tuple[int, Message]] = []
        if phase == 0:
            own = self.rng.integers(ctx.domain_size, size=self.params.IN)
            self._own = own
            self.value = int(own[0])
            msg = InitValuesMsg(_frozen(own))
            return [(j, msg) for j in ctx.neighbor_ids]

        if phase == 1:
            got = {e.sender: e.payload.values for e in inbox if type(e.payload) is InitValuesMsg}
            if set(got) != set(ctx.neighbor_ids):
                raise ProtocolError(f"agent {ctx.agent_id} missing initial neighbour values")
            part = np.full((self.params.IN, self.n + 1), UNASSIGNED, dtype=np.int64)
            part[:, ctx.agent_id] = self._own
            for j, v in got.items():
                part[:, j] = v
            nbr = part[:, ctx.neighbor_ids]
            # every incident edge, so the root ends up with twice the cost
            part[:, self.n] = np.add.reduce(
                self._by_nbr[ctx.neighbor_rows.T, nbr, self._own[:, None]], axis=1
            )
            self._partial = part

        for env in inbox:
            msg = env.payload
            if type(msg) is not PopulationMsg:
                continue
            if env.sender in ctx.children:
                part = self._partial
                assert part is not None
                merged = _merge_arrays(part[:, : self.n], msg.rows[:, : self.n])
                self._partial = np.column_stack([merged, part[:, self.n] + msg.rows[:, self.n]])
                self._waiting.discard(env.sender)
            elif env.sender == ctx.parent:
                self.pop = np.array(msg.rows)
                self.start = msg.start
                out += [(c, msg) for c in ctx.children]

        if self._partial is not None and not self._waiting:
            part, self._partial = self._partial, None
            if ctx.is_root:
                if (part[:, self.n] % 2).any():
                    raise ProtocolError("initial fitness is not an exact double count")
                part[:, self.n] //= 2
                if ctx.global_cap is not None:
                    part[:, self.n] += [ctx.global_cap.cost(np.bincount(v)) for v in part[:, : self.n]]
                start = phase + self.H + 1
                msg = PopulationMsg(_frozen(part), start)
                self.pop, self.start = part, start
                out += [(c, msg) for c in ctx.children]
            else:
                out.append((ctx.parent, PopulationMsg(_frozen(part))))
        return out

    # -- optimisation ---------------------------------------------------------
    def step(self, phase: int, inbox: Sequence[Envelope]) -> list[tuple[int, Message]]:
        if self.start is None or phase < self.start:
            return self._init_step(phase, inbox)
        out: list[tuple[int, Message]] = []
        ctx = self.ctx
        reg = self.registry
        received = phase - self.start  # iteration whose messages arrive now
        final = received == self.params.iterations

        if received >= 1:
            blocks = []
            found: list[FoundMsg] = []
            for env in inbox:
                msg = env.payload
                if type(msg) is PopulationMsg:
                    blocks.append(msg.rows)
                elif type(msg) is UpdateMsg:
                    reg.store(msg.version, msg.individual)
                    reg.offer(msg.individual, -1)
                    if not final:
                        out += [(c, msg) for c in ctx.children]
                elif type(msg) is FoundMsg:
                    found.append(msg)
            for msg in sorted(found, key=lambda m: (m.individual.fitness, m.finder)):
                reg.offer(msg.individual, msg.finder)
            if len(blocks) != len(ctx.neighbor_ids):
                raise ProtocolError(
                    f"agent {ctx.agent_id} got {len(blocks)} migrant blocks in phase {phase}"
                )
            self.pop = np.concatenate(blocks)
            self._decide(received)

        if final:
            self.done = True
            return out
        out += self._iterate(received + 1)
        return out

    def _decide(self, itr: int) -> None:
        self.decision_itr = itr
        if itr < self.H:
            return
        gb = self.registry.lookup(itr - self.H + 1)
        if gb is None:
            raise ProtocolError(f"agent {self.ctx.agent_id} has no global best for iteration {itr}")
        self.value = int(gb.values[self.ctx.agent_id])
        self.held_cost = gb.fitness

    def _iterate(self, itr: int) -> list[tuple[int, Message]]:
        ctx = self.ctx
        p = self.params
        n = self.n
        reg = self.registry
        reg.Itr = itr
        out: list[tuple[int, Message]] = []

        pop = self.pop
        new, delta = mutate(ctx, pop[:, :n], p, self.rng, self._by_nbr)
        child = pop.copy()
        child[:, ctx.agent_id] = new
        child[:, n] += delta
        union = np.concatenate((pop, child))
        fitness = union[:, n]
        b = int(np.argmin(fitness))
        self.best_log[itr] = int(fitness[b])
        if reg.LB is None or fitness[b] < reg.LB.fitness:
            reg.offer(Individual(union[b, :n], fitness[b]), ctx.agent_id)

        keep = reinsert(fitness, self.target, p.alpha, p.epsilon, self.rng)
        self.pop = union[keep]

        if reg.improves():
            lb = reg.LB
            assert lb is not None
            if ctx.is_root:
                reg.store(itr, lb)
                self.gb_log[itr] = lb.fitness
                msg: Message = UpdateMsg(itr, lb)
                out += [(c, msg) for c in ctx.children]
            else:
                out.append((ctx.parent, FoundMsg(lb, reg.LB_finder)))
        reg.prune()

        for j, idx in zip(ctx.neighbor_ids, migrate(self.target, len(ctx.neighbor_ids), p.ER, self.rng)):
            block = self.pop[idx]
            block.setflags(write=False)
            out.append((j, PopulationMsg(block)))
        return out

    def anytime(self) -> tuple[int, int] | None:
        if self.held_cost is None:
            return None
        return self.decision_itr, self.held_cost


def aed_factory(params: AedParams):
    return lambda ctx: AedProgram(ctx, params)
