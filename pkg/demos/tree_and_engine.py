"""Build a BFS pseudo-tree and run a tiny custom protocol on the simulator.

Every agent sends its degree up the tree; the root learns the total, which
is twice the number of constraints. Run with ``python3 demos/tree_and_engine.py``.
"""

from __future__ import annotations

from dataclasses import dataclass

from popdcop.benchgen import gen_sensor_grid
from popdcop.engine import AgentProgram, Engine, Message
from popdcop.pseudotree import build_bfs_tree


@dataclass(frozen=True)
class Partial(Message):
    kind = "partial"
    total: int


class DegreeSum(AgentProgram):
    def __init__(self, ctx):
        super().__init__(ctx)
        self.total = len(ctx.neighbor_ids)
        self.waiting = set(ctx.children)

    def step(self, phase, inbox):
        for env in inbox:
            self.total += env.payload.total
            self.waiting.discard(env.sender)
        if self.waiting or self.done:
            return []
        self.done = True
        return [] if self.ctx.is_root else [(self.ctx.parent, Partial(self.total))]


def main() -> None:
    inst = gen_sensor_grid(4, 5, seed=0)
    tree = build_bfs_tree(inst)
    print(f"root {tree.root}, height {tree.height}, leaves {[a for a in inst.agent_ids if tree.is_leaf(a)]}")
    engine = Engine(inst, DegreeSum, seed=0)
    trace = engine.run(50)
    root = engine.programs[tree.root]
    print(f"root total {root.total} after {len(trace)} barriers; constraints {len(inst.edges)}")
    for rec in trace.records:
        print(f"  barrier {rec.barrier}: {rec.total_messages} messages, {rec.payload_bytes} bytes")


if __name__ == "__main__":
    main()
