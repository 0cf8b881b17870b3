"""Anytime global-cost tracking for parallel local search.

Every agent owns the edges towards higher-id neighbours, so summing the
owned-edge costs over all agents counts each table exactly once. Partial
sums travel up the BFS tree on a fixed schedule: an agent on level ``l``
forwards the sum for the state observed at phase ``q`` during phase
``q + 1 + (H - l)``, so the root finalises that state exactly ``H``
barriers after it was observed. Each message carries one sum per system.

When the best cost ever seen improves, the root sends an adopt notice down
the tree. Every agent looks up its own value for the winning state in a
short history and switches to it at a common phase ``H`` barriers later,
which keeps the collectively held assignment consistent at every barrier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import AgentContext, Envelope, Message, ProtocolError

__all__ = [
    "AlsMsg",
    "AdoptMsg",
    "MetaBest",
    "als_contribution",
    "ModifiedAls",
]


@dataclass(frozen=True, slots=True)
class AlsMsg(Message):
    kind = "als"
    tag: int
    sums: np.ndarray

    @property
    def size(self) -> int:
        return len(self.sums)


@dataclass(frozen=True, slots=True)
class AdoptMsg(Message):
    kind = "adopt"
    tag: int
    system: int
    adopt_phase: int

    @property
    def size(self) -> int:
        return 3


@dataclass(frozen=True)
class MetaBest:
    cost: int
    tag: int
    system: int


def als_contribution(ctx: AgentContext, own: np.ndarray, nbr_values: np.ndarray) -> np.ndarray:
    """Per-system cost of the edges this agent owns (neighbour id above its own).

    ``own`` has shape ``(K,)`` and ``nbr_values`` ``(|N|, K)`` in
    ``ctx.neighbor_ids`` order.
    """
    own = np.asarray(own)
    owned = ctx.owned_edges
    if not len(owned):
        return np.zeros(own.shape, dtype=np.int64)
    tables = ctx.owned_tables
    return tables[ctx.owned_rows, own[None, :], nbr_values[owned]].sum(axis=0)


class ModifiedAls:
    """Agent-side ALS state for ``K`` parallel systems.

    The root additionally tracks per-state global costs, the best cost per
    system inside the current call and the best over everything.
    """

    def __init__(self, ctx: AgentContext, n_systems: int):
        self.ctx = ctx
        self.K = n_systems
        self.H = ctx.height
        self.window = 2 * self.H + 3
        self.history: dict[int, np.ndarray] = {}
        self.partial: dict[int, np.ndarray] = {}
        self.pending_adopt: list[tuple[int, int]] = []
        # root-only bookkeeping
        self.finalized: dict[int, np.ndarray] = {}
        self.meta: MetaBest | None = None
        self.call_best: np.ndarray | None = None

    # -- every agent -----------------------------------------------------
    def record_state(self, tag: int, values: np.ndarray) -> None:
        self.history[tag] = np.array(values, dtype=np.int64)

    def observe(self, tag: int, nbr_values: np.ndarray, edge_costs: np.ndarray | None = None) -> None:
        """Compute this agent's contribution for the state observed at ``tag``.

        ``edge_costs`` (``(|N|, K)`` incident costs of that state) may be
        passed when the caller already has them.
        """
        if edge_costs is None:
            self.partial[tag] = als_contribution(self.ctx, self.history[tag], nbr_values)
        else:
            self.partial[tag] = np.add.reduce(edge_costs[self.ctx.owned_edges], axis=0)

    def pipeline(
        self, phase: int, inbox: Sequence[Envelope]
    ) -> tuple[list[tuple[int, Message]], tuple[int, np.ndarray] | None]:
        """Forward (or finalise at the root) the sum scheduled for this phase.

        ``inbox`` may hold any envelopes; only ALS sums are used. Returns
        outgoing messages and, at the root, ``(tag, costs)`` when a state
        was finalised.
        """
        tag = phase - 1 - (self.H - self.ctx.level)
        received = {e.sender: e.payload for e in inbox if type(e.payload) is AlsMsg} if inbox else {}
        for sender, msg in received.items():
            if msg.tag != tag:
                raise ProtocolError(
                    f"agent {self.ctx.agent_id} got ALS tag {msg.tag} from {sender} "
                    f"in phase {phase}, expected {tag}"
                )
        own = self.partial.pop(tag, None)
        if own is None:
            if received:
                raise ProtocolError(
                    f"agent {self.ctx.agent_id} got ALS sums for unknown state {tag}"
                )
            return [], None
        total = own.copy()
        for child in self.ctx.children:
            if child not in received:
                raise ProtocolError(
                    f"agent {self.ctx.agent_id} missing ALS sum from child {child} "
                    f"for state {tag} in phase {phase}"
                )
            total += received[child].sums
        if self.ctx.is_root:
            total.setflags(write=False)
            self.finalized[tag] = total
            return [], (tag, total)
        return [(self.ctx.parent, AlsMsg(tag, total))], None

    def receive_adopt(self, inbox: Sequence[Envelope]) -> list[tuple[int, Message]]:
        out: list[tuple[int, Message]] = []
        if not inbox:
            return out
        for env in inbox:
            msg = env.payload
            if type(msg) is AdoptMsg:
                self._queue_adopt(msg)
                out.extend((c, msg) for c in self.ctx.children)
        return out

    def _queue_adopt(self, msg: AdoptMsg) -> None:
        values = self.history.get(msg.tag)
        if values is None:
            raise ProtocolError(
                f"agent {self.ctx.agent_id} no longer holds state {msg.tag} to adopt"
            )
        self.pending_adopt.append((msg.adopt_phase, int(values[msg.system])))

    def apply_adoptions(self, phase: int) -> int | None:
        """Return the value to hold from this phase on, if an adoption is due."""
        if not self.pending_adopt:
            return None
        due = [v for p, v in self.pending_adopt if p <= phase]
        if not due:
            return None
        self.pending_adopt = [(p, v) for p, v in self.pending_adopt if p > phase]
        return due[-1]

    def prune(self, phase: int) -> None:
        floor = phase - self.window
        # tags are inserted in increasing order, so the oldest come first
        for store in (self.history, self.finalized):
            while store:
                oldest = next(iter(store))
                if oldest >= floor:
                    break
                del store[oldest]

    # -- root only -------------------------------------------------------
    def start_call(self) -> None:
        self.call_best = None

    def track(self, phase: int, tag: int, costs: np.ndarray) -> list[tuple[int, Message]]:
        """Update per-call and meta bests; broadcast an adopt notice on improvement.

        Ties keep the earlier state and, within a state, the lowest system.
        """
        costs = np.asarray(costs, dtype=np.int64)
        if self.call_best is None:
            self.call_best = costs.copy()
        else:
            np.minimum(self.call_best, costs, out=self.call_best)
        k = int(np.argmin(costs))
        cost = int(costs[k])
        if self.meta is not None and cost >= self.meta.cost:
            return []
        self.meta = MetaBest(cost, tag, k)
        msg = AdoptMsg(tag, k, phase + self.H)
        self._queue_adopt(msg)
        return [(c, msg) for c in self.ctx.children]
