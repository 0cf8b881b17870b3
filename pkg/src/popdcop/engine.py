"""Deterministic synchronous message-passing simulator.

Each agent is an isolated state machine. In every phase the engine hands
each agent the messages sent to it in the previous phase, collects what the
agent sends, and closes the phase with a barrier. Messages therefore have a
latency of exactly one barrier.
"""

from __future__ import annotations

import csv
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, ClassVar, Iterable, NamedTuple, Sequence

import numpy as np

from .model import DcopInstance, GlobalCapConstraint
from .pseudotree import PseudoTree, build_bfs_tree, tree_height

__all__ = [
    "ProtocolError",
    "Message",
    "Envelope",
    "AgentContext",
    "AgentProgram",
    "BarrierRecord",
    "RunTrace",
    "Engine",
    "build_engine",
    "run_phases",
]

BYTES_PER_ENTRY = 8


class ProtocolError(RuntimeError):
    """An agent program broke the messaging contract."""


class Message:
    """Base class for payloads.

    ``size`` is the number of scalar entries carried; the trace converts it
    to bytes at 8 bytes per entry.
    """

    kind: ClassVar[str] = "message"

    @property
    def size(self) -> int:
        return 1


class Envelope(NamedTuple):
    sender: int
    receiver: int
    phase: int
    payload: Any


@dataclass(eq=False)
class AgentContext:
    """Everything an agent is allowed to know about the world."""

    agent_id: int
    neighbor_ids: tuple[int, ...]
    parent: int | None
    children: tuple[int, ...]
    level: int
    height: int
    root: int
    n_agents: int
    domain_size: int
    tables: dict[int, np.ndarray]
    global_cap: GlobalCapConstraint | None
    seed: int

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def rng(self, label: str) -> np.random.Generator:
        """Random stream keyed by (seed, agent, label), independent of step order."""
        key = zlib.crc32(label.encode("utf-8"))
        return np.random.default_rng([self.seed, self.agent_id, key])

    @cached_property
    def stacked_tables(self) -> np.ndarray:
        """Incident tables as one ``(|N|, |D_i|, max |D_j|)`` array, zero padded."""
        width = max((t.shape[1] for t in self.tables.values()), default=1)
        out = np.zeros((len(self.neighbor_ids), self.domain_size, width), dtype=np.int64)
        for k, j in enumerate(self.neighbor_ids):
            t = self.tables[j]
            out[k, :, : t.shape[1]] = t
        out.setflags(write=False)
        return out

    @cached_property
    def neighbor_array(self) -> np.ndarray:
        return np.array(self.neighbor_ids, dtype=np.intp)

    @cached_property
    def owned_edges(self) -> np.ndarray:
        """Positions in ``neighbor_ids`` of the edges this agent owns (higher-id end)."""
        owned = [k for k, j in enumerate(self.neighbor_ids) if j > self.agent_id]
        return np.array(owned, dtype=np.intp)

    @cached_property
    def owned_tables(self) -> np.ndarray:
        return self.stacked_tables[self.owned_edges]

    @cached_property
    def owned_rows(self) -> np.ndarray:
        return np.arange(len(self.owned_edges))[:, None]

    @cached_property
    def neighbor_rows(self) -> np.ndarray:
        return np.arange(len(self.neighbor_ids))[:, None]


class AgentProgram:
    """Base class for per-agent algorithm state machines.

    Subclasses implement :meth:`step`, keep ``value`` pointing at the
    agent's current decision and set ``done`` once finished. The root may
    report ``(iteration, cost)`` through :meth:`anytime`.
    """

    def __init__(self, ctx: AgentContext):
        self.ctx = ctx
        self.done = False
        self.value = 0

    def step(self, phase: int, inbox: Sequence[Envelope]) -> list[tuple[int, Message]]:
        raise NotImplementedError

    def anytime(self) -> tuple[int, int] | None:
        return None


@dataclass(frozen=True)
class BarrierRecord:
    barrier: int
    messages: tuple[int, ...]
    payload_bytes: int
    anytime_cost: int | None
    iteration: int | None
    by_kind: dict[str, tuple[int, int]]

    @property
    def total_messages(self) -> int:
        return sum(self.messages)


@dataclass
class RunTrace:
    records: list[BarrierRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def anytime_series(self) -> list[tuple[int, int]]:
        """``(iteration, cost)`` for every barrier where the root reported."""
        return [
            (r.iteration, r.anytime_cost)
            for r in self.records
            if r.anytime_cost is not None
        ]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["barrier", "agent_msgs_total", "payload_bytes", "anytime_cost"])
            for r in self.records:
                cost = "" if r.anytime_cost is None else r.anytime_cost
                w.writerow([r.barrier, r.total_messages, r.payload_bytes, cost])


ProgramFactory = Callable[[AgentContext], AgentProgram]


class Engine:
    """Round-based simulator over one instance.

    ``order_seed`` shuffles the order in which agents step inside a phase;
    results must not depend on it.
    """

    def __init__(
        self,
        instance: DcopInstance,
        program_factory: ProgramFactory,
        seed: int,
        root: int | None = None,
        order_seed: int | None = None,
    ):
        self.instance = instance
        self.seed = int(seed)
        self.tree: PseudoTree = build_bfs_tree(instance, root)
        height = tree_height(self.tree)
        self.contexts = [
            AgentContext(
                agent_id=a,
                neighbor_ids=instance.neighbors[a],
                parent=self.tree.parent[a],
                children=self.tree.children[a],
                level=self.tree.level[a],
                height=height,
                root=self.tree.root,
                n_agents=instance.n_agents,
                domain_size=instance.domain_sizes[a],
                tables={j: instance.table(a, j) for j in instance.neighbors[a]},
                global_cap=instance.global_cap,
                seed=self.seed,
            )
            for a in instance.agent_ids
        ]
        self.programs = [program_factory(ctx) for ctx in self.contexts]
        self.phase = 0
        self.pending: list[Envelope] = []
        self._neighbor_sets = [frozenset(n) for n in instance.neighbors]
        self._order_rng = None if order_seed is None else np.random.default_rng(order_seed)

    @property
    def height(self) -> int:
        return tree_height(self.tree)

    @property
    def root_program(self) -> AgentProgram:
        return self.programs[self.tree.root]

    def assignment(self) -> np.ndarray:
        """Current decision of every agent (observer view, not agent-visible)."""
        return np.array([p.value for p in self.programs], dtype=np.int64)

    def done(self) -> bool:
        return all(p.done for p in self.programs)

    def step(self) -> BarrierRecord:
        n = self.instance.n_agents
        inboxes: list[list[Envelope]] = [[] for _ in range(n)]
        for env in self.pending:  # ordered by sender, then emission order
            inboxes[env.receiver].append(env)

        order: Iterable[int] = range(n)
        if self._order_rng is not None:
            order = self._order_rng.permutation(n).tolist()

        per_agent: list[list[Envelope]] = [[] for _ in range(n)]
        counts = [0] * n
        kinds: Counter = Counter()
        sizes: Counter = Counter()
        phase = self.phase
        for a in order:
            allowed = self._neighbor_sets[a]
            sent = per_agent[a]
            last = None
            kind, size = "", 0
            for receiver, payload in self.programs[a].step(phase, inboxes[a]):
                if receiver not in allowed:
                    raise ProtocolError(
                        f"agent {a} tried to send to non-neighbour {receiver} "
                        f"in phase {phase}"
                    )
                sent.append(Envelope(a, receiver, phase, payload))
                if payload is not last:
                    last = payload
                    kind = getattr(payload, "kind", type(payload).__name__)
                    size = getattr(payload, "size", 1)
                kinds[kind] += 1
                sizes[kind] += size
            counts[a] = len(sent)

        report = self.root_program.anytime()
        record = BarrierRecord(
            barrier=phase,
            messages=tuple(counts),
            payload_bytes=BYTES_PER_ENTRY * sum(sizes.values()),
            anytime_cost=None if report is None else int(report[1]),
            iteration=None if report is None else int(report[0]),
            by_kind={k: (kinds[k], sizes[k]) for k in sorted(kinds)},
        )
        self.pending = [env for sent in per_agent for env in sent]
        self.phase += 1
        return record

    def run(
        self,
        barrier_budget: int,
        observer: Callable[["Engine", BarrierRecord], None] | None = None,
        deadline: float | None = None,
    ) -> RunTrace:
        """Advance at most ``barrier_budget`` phases, stopping early when all agents are done.

        ``deadline`` is an optional ``time.monotonic()`` value after which no
        further phase is started (wall-clock mode).
        """
        if barrier_budget < 1:
            raise ValueError("barrier_budget must be at least 1")
        trace = RunTrace()
        for _ in range(barrier_budget):
            record = self.step()
            trace.records.append(record)
            if observer is not None:
                observer(self, record)
            if self.done() or (deadline is not None and time.monotonic() >= deadline):
                break
        return trace


def build_engine(
    instance: DcopInstance,
    agent_program: ProgramFactory,
    seed: int,
    root: int | None = None,
    order_seed: int | None = None,
) -> Engine:
    return Engine(instance, agent_program, seed, root=root, order_seed=order_seed)


def run_phases(engine: Engine, barrier_budget: int, observer=None) -> RunTrace:
    return engine.run(barrier_budget, observer)
