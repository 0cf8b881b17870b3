"""DCOP problem representation and exact cost evaluation.

Agents are numbered ``0..n-1`` and each controls one variable whose values
are the integers ``0..|D_i|-1``. Binary cost tables are stored once per
unordered pair ``(i, j)`` with ``i < j`` and rows indexed by ``i``'s value.
All costs are non-negative integers so every bookkeeping identity can be
checked exactly.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "InstanceError",
    "GlobalCapConstraint",
    "DcopInstance",
    "validate_instance",
    "load_instance",
    "save_instance",
    "evaluate_global_cost",
    "cap_penalty",
    "local_cost",
    "delta_local_cost",
    "brute_force_optimum",
    "four_agent_example",
    "iter_assignments",
]


class InstanceError(ValueError):
    """Raised when a candidate instance description is malformed."""


@dataclass(frozen=True)
class GlobalCapConstraint:
    """Soft cap on how many agents may take the same value.

    Every agent above ``cap`` on a value costs ``penalty``.
    """

    cap: int
    penalty: int

    def __post_init__(self):
        if self.cap < 0 or self.penalty < 0:
            raise InstanceError("cap and penalty must be non-negative")

    def cost(self, histogram: np.ndarray) -> int:
        over = np.maximum(np.asarray(histogram, dtype=np.int64) - self.cap, 0)
        return int(self.penalty * over.sum())


@dataclass(frozen=True, eq=False)
class DcopInstance:
    domain_sizes: tuple[int, ...]
    tables: Mapping[tuple[int, int], np.ndarray]
    global_cap: GlobalCapConstraint | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return len(self.domain_sizes)

    @property
    def agent_ids(self) -> range:
        return range(self.n_agents)

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.tables))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in self.agent_ids]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(x)) for x in nbrs)

    @cached_property
    def max_domain(self) -> int:
        return max(self.domain_sizes)

    def degree(self, agent: int) -> int:
        return len(self.neighbors[agent])

    def table(self, i: int, j: int) -> np.ndarray:
        """Cost table oriented with rows indexed by ``i``'s value."""
        if i < j:
            return self.tables[(i, j)]
        return self.tables[(j, i)].T

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "agents": self.n_agents,
            "domains": list(self.domain_sizes),
            "constraints": [
                {"i": i, "j": j, "table": self.tables[(i, j)].tolist()}
                for i, j in self.edges
            ],
        }
        if self.global_cap is not None:
            doc["global_cap"] = {
                "cap": self.global_cap.cap,
                "penalty": self.global_cap.penalty,
            }
        doc["meta"] = dict(self.meta)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _connected(n: int, edges: Sequence[tuple[int, int]]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


def validate_instance(raw: Mapping[str, Any]) -> DcopInstance:
    """Build a :class:`DcopInstance` from its JSON-style description.

    Raises :class:`InstanceError` on empty domains, bad or duplicate pairs,
    table shape mismatches, negative or non-integer costs and disconnected
    constraint graphs.
    """
    try:
        n = int(raw["agents"])
        domains = tuple(int(d) for d in raw["domains"])
        constraints = list(raw.get("constraints", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"malformed instance description: {exc}") from exc
    if n < 1 or len(domains) != n:
        raise InstanceError(f"expected {n} domain sizes, got {len(domains)}")
    for a, d in enumerate(domains):
        if d < 1:
            raise InstanceError(f"agent {a} has an empty domain")

    tables: dict[tuple[int, int], np.ndarray] = {}
    for c in constraints:
        i, j = int(c["i"]), int(c["j"])
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise InstanceError(f"constraint ({i}, {j}) must join two distinct agents")
        table = np.asarray(c["table"])
        if table.ndim != 2 or table.shape != (domains[i], domains[j]):
            raise InstanceError(
                f"table for ({i}, {j}) has shape {table.shape}, "
                f"expected {(domains[i], domains[j])}"
            )
        if table.size and not np.issubdtype(table.dtype, np.integer):
            if not np.all(np.equal(np.mod(table, 1), 0)):
                raise InstanceError(f"table for ({i}, {j}) has non-integer costs")
        table = table.astype(np.int64)
        if (table < 0).any():
            raise InstanceError(f"table for ({i}, {j}) has negative costs")
        if i > j:
            i, j, table = j, i, table.T.copy()
        if (i, j) in tables:
            raise InstanceError(f"duplicate constraint for pair ({i}, {j})")
        table.setflags(write=False)
        tables[(i, j)] = table

    if n < 2 or not _connected(n, list(tables)):
        raise InstanceError("constraint graph is disconnected")

    cap = raw.get("global_cap")
    global_cap = None
    if cap is not None:
        global_cap = GlobalCapConstraint(int(cap["cap"]), int(cap["penalty"]))
    return DcopInstance(domains, tables, global_cap, dict(raw.get("meta", {})))


def load_instance(path: str | Path) -> DcopInstance:
    with open(path, encoding="utf-8") as fh:
        return validate_instance(json.load(fh))


def save_instance(instance: DcopInstance, path: str | Path) -> None:
    Path(path).write_text(instance.to_json() + "\n", encoding="utf-8")


def _histogram(instance: DcopInstance, values: np.ndarray) -> np.ndarray:
    return np.bincount(values, minlength=instance.max_domain)


def cap_penalty(instance: DcopInstance, values: Sequence[int] | np.ndarray) -> int:
    """Global-cap penalty of a complete assignment (0 without a cap)."""
    if instance.global_cap is None:
        return 0
    return instance.global_cap.cost(_histogram(instance, np.asarray(values)))


def evaluate_global_cost(instance: DcopInstance, values: Sequence[int] | np.ndarray) -> int:
    """Aggregated cost of a complete assignment, each table counted once."""
    values = np.asarray(values, dtype=np.int64)
    if values.shape != (instance.n_agents,):
        raise ValueError("assignment must give exactly one value per agent")
    total = 0
    for (i, j), table in instance.tables.items():
        total += int(table[values[i], values[j]])
    return total + cap_penalty(instance, values)


def local_cost(
    instance: DcopInstance, agent: int, value: int, neighbor_values: Mapping[int, int]
) -> int:
    """Sum of ``agent``'s incident table entries under the given values."""
    nbrs = instance.neighbors[agent]
    if set(neighbor_values) != set(nbrs):
        raise ValueError(f"neighbor values must cover exactly {nbrs}")
    return sum(int(instance.table(agent, j)[value, neighbor_values[j]]) for j in nbrs)


def delta_local_cost(
    instance: DcopInstance,
    agent: int,
    old_value: int,
    new_value: int,
    neighbor_values: Mapping[int, int],
    histogram: Sequence[int] | np.ndarray | None = None,
) -> int:
    """Change in local cost when ``agent`` moves from ``old_value`` to ``new_value``.

    ``histogram`` is the value-count histogram of the full assignment
    *before* the move (it includes ``agent`` on ``old_value``). When it is
    given and the instance carries a global cap, the penalty change is added.
    """
    if old_value == new_value:
        return 0
    delta = local_cost(instance, agent, new_value, neighbor_values) - local_cost(
        instance, agent, old_value, neighbor_values
    )
    cap = instance.global_cap
    if cap is not None and histogram is not None:
        c_old, c_new = int(histogram[old_value]), int(histogram[new_value])
        over = lambda c: max(0, c - cap.cap)  # noqa: E731
        delta += cap.penalty * (
            over(c_old - 1) - over(c_old) + over(c_new + 1) - over(c_new)
        )
    return delta


def brute_force_optimum(
    instance: DcopInstance, max_assignments: int = 10**7, chunk: int = 1 << 16
) -> tuple[tuple[int, ...], int]:
    """Exact minimum by exhaustive enumeration.

    Assignments are visited in lexicographic order (agent 0 most
    significant), so ties resolve to the lexicographically smallest one.
    """
    shape = instance.domain_sizes
    total = int(np.prod(shape, dtype=np.float64))
    if total > max_assignments:
        raise InstanceError(
            f"instance has {total} assignments, above the bound {max_assignments}"
        )
    best_cost = None
    best_idx = -1
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        vals = np.stack(np.unravel_index(idx, shape), axis=1)
        costs = np.zeros(len(idx), dtype=np.int64)
        for (i, j), table in instance.tables.items():
            costs += table[vals[:, i], vals[:, j]]
        if instance.global_cap is not None:
            hist = np.stack(
                [(vals == v).sum(axis=1) for v in range(instance.max_domain)], axis=1
            )
            over = np.maximum(hist - instance.global_cap.cap, 0).sum(axis=1)
            costs += instance.global_cap.penalty * over
        k = int(np.argmin(costs))
        if best_cost is None or costs[k] < best_cost:
            best_cost, best_idx = int(costs[k]), int(idx[k])
    best = tuple(int(v) for v in np.unravel_index(best_idx, shape))
    return best, int(best_cost)


def four_agent_example(global_cap: GlobalCapConstraint | None = None) -> DcopInstance:
    """The four-agent, binary-domain worked example.

    Agents ``x1..x4`` map to ids ``0..3`` and values ``1, 2`` to ``0, 1``.
    Edges: x1-x2, x1-x3, x2-x3, x2-x4.
    """
    raw: dict[str, Any] = {
        "agents": 4,
        "domains": [2, 2, 2, 2],
        "constraints": [
            {"i": 0, "j": 1, "table": [[7, 12], [3, 15]]},
            {"i": 1, "j": 2, "table": [[2, 7], [11, 18]]},
            {"i": 1, "j": 3, "table": [[8, 4], [15, 6]]},
            {"i": 0, "j": 2, "table": [[9, 13], [12, 5]]},
        ],
        "meta": {"generator": "four_agent_example"},
    }
    if global_cap is not None:
        raw["global_cap"] = {"cap": global_cap.cap, "penalty": global_cap.penalty}
    return validate_instance(raw)


def iter_assignments(instance: DcopInstance):
    """Yield every complete assignment in lexicographic order."""
    return itertools.product(*(range(d) for d in instance.domain_sizes))
