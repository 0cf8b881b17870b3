"""Breadth-first pseudo-tree over the constraint graph."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .model import DcopInstance, InstanceError

__all__ = ["PseudoTree", "build_bfs_tree", "tree_height", "default_root"]


@dataclass(frozen=True)
class PseudoTree:
    root: int
    parent: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...]
    level: tuple[int, ...]

    @property
    def height(self) -> int:
        return tree_height(self)

    def is_leaf(self, agent: int) -> bool:
        return not self.children[agent]


def default_root(instance: DcopInstance) -> int:
    """Highest-degree agent, lowest id on ties."""
    return max(instance.agent_ids, key=lambda a: (instance.degree(a), -a))


def build_bfs_tree(instance: DcopInstance, root: int | None = None) -> PseudoTree:
    """Layer agents by BFS distance from ``root``.

    A non-root agent's parent is its lowest-id neighbour one layer up.
    """
    if root is None:
        root = default_root(instance)
    n = instance.n_agents
    level: list[int | None] = [None] * n
    level[root] = 0
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in instance.neighbors[u]:
            if level[v] is None:
                level[v] = level[u] + 1  # type: ignore[operator]
                queue.append(v)
    if any(lv is None for lv in level):
        missing = [a for a, lv in enumerate(level) if lv is None]
        raise InstanceError(f"agents {missing} unreachable from root {root}")

    parent: list[int | None] = [None] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for a in range(n):
        if a == root:
            continue
        p = min(v for v in instance.neighbors[a] if level[v] == level[a] - 1)  # type: ignore[operator]
        parent[a] = p
        children[p].append(a)
    return PseudoTree(
        root=root,
        parent=tuple(parent),
        children=tuple(tuple(sorted(c)) for c in children),
        level=tuple(int(lv) for lv in level),  # type: ignore[arg-type]
    )


def tree_height(tree: PseudoTree) -> int:
    """Maximum level, with the root on level 0."""
    return max(tree.level)
