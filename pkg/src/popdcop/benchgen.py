"""Seeded generators for the benchmark families.

Every generator is a pure function of its parameters and seed and returns a
validated :class:`DcopInstance` whose ``meta`` records how it was made.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import networkx as nx
import numpy as np

from .model import DcopInstance, InstanceError, validate_instance

__all__ = [
    "GenSpec",
    "FAMILIES",
    "generate",
    "gen_random_dcop",
    "gen_sensor_grid",
    "gen_scale_free",
    "gen_graph_coloring",
    "gen_target_tracking",
    "grid_edges",
]

MAX_RETRIES = 1000


def _er_edges(n: int, p: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Connected G(n, p) sample, redrawn until connected."""
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(MAX_RETRIES):
        keep = rng.random(len(iu)) < p
        edges = list(zip(iu[keep].tolist(), ju[keep].tolist()))
        g = nx.Graph(edges)
        g.add_nodes_from(range(n))
        if nx.is_connected(g):
            return edges
    raise InstanceError(f"no connected G({n}, {p}) sample after {MAX_RETRIES} draws")


def grid_edges(rows: int, cols: int) -> list[tuple[int, int]]:
    """4-neighbourhood edges of a ``rows x cols`` grid, agents numbered row-major."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            a = r * cols + c
            if c + 1 < cols:
                edges.append((a, a + 1))
            if r + 1 < rows:
                edges.append((a, a + cols))
    return edges


def _build(
    n: int,
    domain: int,
    edges: list[tuple[int, int]],
    tables: list[np.ndarray],
    meta: dict[str, Any],
    global_cap: dict | None = None,
) -> DcopInstance:
    raw: dict[str, Any] = {
        "agents": n,
        "domains": [domain] * n,
        "constraints": [{"i": i, "j": j, "table": t} for (i, j), t in zip(edges, tables)],
        "meta": meta,
    }
    if global_cap is not None:
        raw["global_cap"] = global_cap
    return validate_instance(raw)


def _uniform_tables(rng, n_edges: int, domain: int, lo: int, hi: int) -> list[np.ndarray]:
    return list(rng.integers(lo, hi + 1, size=(n_edges, domain, domain)))


def gen_random_dcop(
    n: int = 70,
    density: float = 0.1,
    domain_size: int = 10,
    cost_lo: int = 1,
    cost_hi: int = 100,
    seed: int = 0,
) -> DcopInstance:
    """Erdős–Rényi constraint graph with uniform integer costs."""
    rng = np.random.default_rng(seed)
    edges = _er_edges(n, density, rng)
    tables = _uniform_tables(rng, len(edges), domain_size, cost_lo, cost_hi)
    meta = {
        "generator": "random",
        "seed": seed,
        "params": {"n": n, "density": density, "domain_size": domain_size,
                   "cost_lo": cost_lo, "cost_hi": cost_hi},
    }
    return _build(n, domain_size, edges, tables, meta)


def gen_sensor_grid(
    rows: int = 7,
    cols: int = 7,
    positions: int = 12,
    util_lo: int = 1,
    util_hi: int = 100,
    seed: int = 0,
) -> DcopInstance:
    """One sensor per grid cell; neighbouring cells interfere."""
    if rows * cols < 2:
        raise InstanceError("a sensor grid needs at least two cells")
    rng = np.random.default_rng(seed)
    edges = grid_edges(rows, cols)
    tables = _uniform_tables(rng, len(edges), positions, util_lo, util_hi)
    meta = {
        "generator": "sensor_grid",
        "seed": seed,
        "params": {"rows": rows, "cols": cols, "positions": positions,
                   "util_lo": util_lo, "util_hi": util_hi},
    }
    return _build(rows * cols, positions, edges, tables, meta)


def gen_scale_free(
    n: int = 100,
    m0: int = 20,
    m: int = 3,
    domain_size: int = 10,
    cost_lo: int = 1,
    cost_hi: int = 100,
    seed: int = 0,
) -> DcopInstance:
    """Random tree on ``m0`` agents, then preferential attachment with ``m`` links each."""
    if not 2 <= m0 <= n:
        raise InstanceError("need 2 <= m0 <= n")
    if n > m0 and not 1 <= m <= m0:
        raise InstanceError("need 1 <= m <= m0")
    rng = np.random.default_rng(seed)
    if m0 == 2:
        edges = [(0, 1)]
    else:
        prufer = rng.integers(m0, size=m0 - 2).tolist()
        tree = nx.from_prufer_sequence(prufer)
        edges = [tuple(sorted(e)) for e in tree.edges()]
    degree = np.zeros(n, dtype=np.float64)
    for i, j in edges:
        degree[i] += 1
        degree[j] += 1
    for new in range(m0, n):
        weights = degree[:new] / degree[:new].sum()
        targets = rng.choice(new, size=m, replace=False, p=weights)
        for t in sorted(targets.tolist()):
            edges.append((t, new))
            degree[t] += 1
        degree[new] += m
    edges.sort()
    tables = _uniform_tables(rng, len(edges), domain_size, cost_lo, cost_hi)
    meta = {
        "generator": "scale_free",
        "seed": seed,
        "params": {"n": n, "m0": m0, "m": m, "domain_size": domain_size,
                   "cost_lo": cost_lo, "cost_hi": cost_hi},
    }
    return _build(n, domain_size, edges, tables, meta)


def gen_graph_coloring(
    n: int = 120,
    density: float = 0.05,
    colors: int = 3,
    penalty_lo: int = 1,
    penalty_hi: int = 100,
    global_cap: dict | None = None,
    seed: int = 0,
) -> DcopInstance:
    """Weighted colouring: a per-edge penalty when both ends share a colour.

    ``global_cap`` (``{"cap": ..., "penalty": ...}``) adds the soft limit on
    agents per colour.
    """
    rng = np.random.default_rng(seed)
    edges = _er_edges(n, density, rng)
    weights = rng.integers(penalty_lo, penalty_hi + 1, size=len(edges))
    eye = np.eye(colors, dtype=np.int64)
    tables = [w * eye for w in weights]
    meta = {
        "generator": "coloring",
        "seed": seed,
        "params": {"n": n, "density": density, "colors": colors,
                   "penalty_lo": penalty_lo, "penalty_hi": penalty_hi,
                   "global_cap": global_cap},
    }
    return _build(n, colors, edges, tables, meta, global_cap)


def _cell_positions(r: int, c: int, side: int) -> np.ndarray:
    """Centres of a ``side x side`` subdivision of cell ``(r, c)`` as ``(x, y)`` pairs."""
    offs = (np.arange(side) + 0.5) / side
    ys, xs = np.meshgrid(r + offs, c + offs, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


def _border_points(r1: int, c1: int, r2: int, c2: int, count: int = 10) -> np.ndarray:
    t = (np.arange(count) + 0.5) / count
    if r1 == r2:  # horizontal neighbours share a vertical border
        x = max(c1, c2) * np.ones(count)
        return np.column_stack([x, r1 + t])
    y = max(r1, r2) * np.ones(count)
    return np.column_stack([c1 + t, y])


def gen_target_tracking(
    rows: int = 7,
    cols: int = 7,
    positions: int = 25,
    seed: int = 0,
) -> DcopInstance:
    """Grid of trackers sharing one target per neighbouring pair.

    The cost of a position pair is ``IR * DL`` scaled by 1000 and rounded:
    ``IR`` is the target's importance in ``[1, 30]`` and ``DL`` adds a
    distance factor in ``(0, 2]`` to an environment factor in ``(0, 1]``.
    """
    side = int(round(positions**0.5))
    if side * side != positions:
        raise InstanceError("positions must be a perfect square")
    if rows * cols < 2:
        raise InstanceError("a tracking grid needs at least two cells")
    rng = np.random.default_rng(seed)
    edges = grid_edges(rows, cols)
    tables = []
    for i, j in edges:
        ri, ci = divmod(i, cols)
        rj, cj = divmod(j, cols)
        target = _border_points(ri, ci, rj, cj)[rng.integers(10)]
        importance = int(rng.integers(1, 31))
        di = np.linalg.norm(_cell_positions(ri, ci, side) - target, axis=1)
        dj = np.linalg.norm(_cell_positions(rj, cj, side) - target, axis=1)
        mean = (di[:, None] + dj[None, :]) / 2
        distance = 2 * mean / mean.max()
        environment = 1.0 - rng.random((positions, positions))
        tables.append(np.rint(1000 * importance * (distance + environment)).astype(np.int64))
    meta = {
        "generator": "target_tracking",
        "seed": seed,
        "params": {"rows": rows, "cols": cols, "positions": positions},
    }
    return _build(rows * cols, positions, edges, tables, meta)


FAMILIES: dict[str, Callable[..., DcopInstance]] = {
    "random": gen_random_dcop,
    "sensor_grid": gen_sensor_grid,
    "scale_free": gen_scale_free,
    "coloring": gen_graph_coloring,
    "target_tracking": gen_target_tracking,
}


@dataclass(frozen=True)
class GenSpec:
    family: str
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {sorted(FAMILIES)}")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "GenSpec":
        doc = dict(doc)
        family = doc.pop("family")
        seed = int(doc.pop("seed", 0))
        params = dict(doc.pop("params", {}))
        params.update(doc)
        return cls(family, seed, params)


def generate(spec: GenSpec) -> DcopInstance:
    return FAMILIES[spec.family](**spec.params, seed=spec.seed)
