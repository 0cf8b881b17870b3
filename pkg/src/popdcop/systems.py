"""K parallel local-search systems driven by a root-side planner.

Work is organised in *calls*. A call of length ``L`` occupies phases
``start .. start + L + 1``: values are initialised and sent at ``start``,
each of the next ``L`` phases makes one decision per system, and the last
phase only observes the final state. The root finalises the call's last
state ``H`` barriers later, hands the per-system feedback to its planner
and broadcasts the next call, which starts once the broadcast has reached
the deepest level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Generator, Sequence

import numpy as np

from .als import ModifiedAls
from .engine import AgentContext, AgentProgram, Envelope, Message, ProtocolError

__all__ = [
    "CallSpec",
    "Feedback",
    "ControlMsg",
    "ValuesMsg",
    "Planner",
    "ParallelSearchProgram",
    "linear_temperature",
]


@dataclass(frozen=True)
class CallSpec:
    """One simulate call.

    ``schedule`` is ``"constant"`` (one temperature per system in
    ``temps``), ``"linear"`` (cooling over ``region``), ``"dsan"``
    (``L / l**2``) or ``"none"``.
    """

    length: int
    learning: bool
    schedule: str = "none"
    temps: tuple[float, ...] | None = None
    region: tuple[float, float] | None = None


@dataclass(frozen=True)
class Feedback:
    best_per_system: np.ndarray
    best_overall: int


@dataclass(frozen=True, slots=True)
class ControlMsg(Message):
    kind = "control"
    start: int
    spec: CallSpec | None

    @property
    def size(self) -> int:
        if self.spec is None:
            return 1
        return 4 + (len(self.spec.temps) if self.spec.temps else 0)


@dataclass(frozen=True, slots=True)
class ValuesMsg(Message):
    kind = "values"
    tag: int
    values: np.ndarray

    @property
    def size(self) -> int:
        return len(self.values)


Planner = Generator[CallSpec, Feedback, None]


def linear_temperature(l: int, length: int, t_min: float, t_max: float) -> float:
    """Linear cooling: ``t_max`` before the first step, ``t_min`` at ``l == length``."""
    return t_min + (t_max - t_min) * (length - l) / length


class ParallelSearchProgram(AgentProgram):
    """Agent program holding ``K`` systems plus the Modified-ALS bookkeeping.

    Subclasses implement :meth:`decide`. ``planner`` is only used at the root.
    """

    def __init__(self, ctx: AgentContext, n_systems: int, planner: Planner | None = None):
        super().__init__(ctx)
        self.K = n_systems
        self.H = ctx.height
        self.als = ModifiedAls(ctx, n_systems)
        self.rng = ctx.rng("systems")
        self.value = int(self.rng.integers(ctx.domain_size))
        self.x = np.zeros(n_systems, dtype=np.int64)
        self.nbr = np.zeros((len(ctx.neighbor_ids), n_systems), dtype=np.int64)
        self.call: CallSpec | None = None
        self.call_start = -1
        self.stop_phase: int | None = None
        self.iterations_done = 0
        self.planner = planner if ctx.is_root else None
        self.held_cost: int | None = None
        self.current_costs = np.zeros(n_systems, dtype=np.int64)
        self._cost_queue: list[tuple[int, int]] = []
        self.calls_completed = 0

    # -- hooks -------------------------------------------------------------
    def decide(self, l: int, temps: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def temperatures(self, l: int) -> np.ndarray:
        spec = self.call
        assert spec is not None
        if spec.schedule == "constant":
            return np.asarray(spec.temps, dtype=np.float64)
        if spec.schedule == "linear":
            lo, hi = spec.region  # type: ignore[misc]
            return np.full(self.K, linear_temperature(l, spec.length, lo, hi))
        if spec.schedule == "dsan":
            return np.full(self.K, spec.length / float(l * l))
        return np.zeros(self.K)

    def initial_values(self, spec: CallSpec) -> np.ndarray:
        d = self.ctx.domain_size
        if spec.learning:
            return np.full(self.K, self.rng.integers(d), dtype=np.int64)
        return self.rng.integers(d, size=self.K).astype(np.int64)

    # -- local cost helpers -----------------------------------------------
    # ``current_costs`` holds the local cost of ``x`` against the neighbour
    # values received this phase; it is refreshed before :meth:`decide`.
    def local_costs(self, values: np.ndarray) -> np.ndarray:
        """Per-system local cost of own ``values`` against current neighbour values."""
        return np.add.reduce(
            self.ctx.stacked_tables[self.ctx.neighbor_rows, values[None, :], self.nbr], axis=0
        )

    def all_local_costs(self) -> np.ndarray:
        """``(|D_i|, K)`` local cost of every own value in every system."""
        tables = self.ctx.stacked_tables
        n, d, _ = tables.shape
        return tables[
            np.arange(n)[:, None, None], np.arange(d)[None, :, None], self.nbr[:, None, :]
        ].sum(axis=0)

    # -- scheduling ---------------------------------------------------------
    def _schedule(self, phase: int, spec: CallSpec | None) -> list[tuple[int, Message]]:
        msg = ControlMsg(phase + self.H, spec)
        self._accept_control(msg)
        return [(c, msg) for c in self.ctx.children]

    def _accept_control(self, msg: ControlMsg) -> None:
        if msg.spec is None:
            self.stop_phase = msg.start
        else:
            self.call = msg.spec
            self.call_start = msg.start

    def _next_call(self, phase: int, feedback: Feedback | None) -> list[tuple[int, Message]]:
        assert self.planner is not None
        try:
            spec = next(self.planner) if feedback is None else self.planner.send(feedback)
        except StopIteration:
            return self._schedule(phase, None)
        if spec.length < 1:
            raise ValueError("call length must be at least 1")
        self.als.start_call()
        return self._schedule(phase, spec)

    # -- main step ----------------------------------------------------------
    def step(self, phase: int, inbox: Sequence[Envelope]) -> list[tuple[int, Message]]:
        out: list[tuple[int, Message]] = []
        senders: list[int] = []
        rows: list[np.ndarray] = []
        tree_msgs: list[Envelope] = []
        for env in inbox:
            msg = env.payload
            if type(msg) is ValuesMsg:
                if msg.tag != phase - 1:
                    raise ProtocolError(
                        f"agent {self.ctx.agent_id} got values for state {msg.tag} "
                        f"in phase {phase}"
                    )
                senders.append(env.sender)
                rows.append(msg.values)
            elif type(msg) is ControlMsg:
                self._accept_control(msg)
                out.extend((c, msg) for c in self.ctx.children)
            else:
                tree_msgs.append(env)

        if self.planner is not None and phase == 0:
            out += self._next_call(phase, None)

        spec = self.call
        start = self.call_start
        if spec is not None and start < phase <= start + spec.length + 1:
            if tuple(senders) != self.ctx.neighbor_ids:
                raise ProtocolError(
                    f"agent {self.ctx.agent_id} received values from {senders} "
                    f"in phase {phase}, expected {list(self.ctx.neighbor_ids)}"
                )
            self.nbr = np.array(rows)
            edges = self.ctx.stacked_tables[self.ctx.neighbor_rows, self.x[None, :], self.nbr]
            self.current_costs = np.add.reduce(edges, axis=0)
            self.als.observe(phase - 1, self.nbr, edges)

        sent, final = self.als.pipeline(phase, tree_msgs)
        out += sent
        if final is not None:
            tag, costs = final
            out += self._root_track(phase, tag, costs)
        out += self.als.receive_adopt(tree_msgs)

        if spec is not None:
            if phase == start:
                self.x = self.initial_values(spec)
                out += self._share(phase)
            elif start < phase <= start + spec.length:
                l = phase - start
                self.x = self.decide(l, self.temperatures(l))
                self.iterations_done += 1
                out += self._share(phase)

        adopted = self.als.apply_adoptions(phase)
        if adopted is not None:
            self.value = adopted
            if self.ctx.is_root:
                due = [c for p, c in self._cost_queue if p <= phase]
                self._cost_queue = [(p, c) for p, c in self._cost_queue if p > phase]
                self.held_cost = due[-1]

        if self.stop_phase is not None and phase >= self.stop_phase and not self.als.pending_adopt:
            self.done = True
        self.als.prune(phase)
        return out

    def random_values(self, size: int) -> np.ndarray:
        """Uniform own-domain values; cheaper than ``Generator.integers`` for small arrays."""
        return (self.rng.random(size) * self.ctx.domain_size).astype(np.int64)

    def _share(self, phase: int) -> list[tuple[int, Message]]:
        values = self.x.copy()
        values.setflags(write=False)
        self.als.history[phase] = values
        msg = ValuesMsg(phase, values)
        return [(j, msg) for j in self.ctx.neighbor_ids]

    def _root_track(self, phase: int, tag: int, costs: np.ndarray) -> list[tuple[int, Message]]:
        before = self.als.meta
        out = self.als.track(phase, tag, costs)
        if self.als.meta is not before:
            self._cost_queue.append((phase + self.H, self.als.meta.cost))  # type: ignore[union-attr]
        spec = self.call
        if spec is not None and tag == self.call_start + spec.length:
            self.calls_completed += 1
            fb = Feedback(self.als.call_best.copy(), self.als.meta.cost)  # type: ignore[union-attr]
            out += self._next_call(phase, fb)
        return out

    def anytime(self) -> tuple[int, int] | None:
        if self.held_cost is None:
            return None
        return self.iterations_done, self.held_cost
