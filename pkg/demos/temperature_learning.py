"""Watch DPSA learn its annealing temperatures on a random instance.

First the greedy-baseline bisection prunes the temperature range, then the
cross-entropy rounds narrow it further before the final cooling call.
Run with ``python3 demos/temperature_learning.py``.
"""

from __future__ import annotations

from popdcop.benchgen import gen_random_dcop
from popdcop.dpsa import DpsaParams, GbParams, dpsa_factory
from popdcop.engine import Engine


class CallLogger:
    """Print each call the root planner schedules."""

    def __init__(self):
        self.seen = set()

    def __call__(self, engine, record):
        root = next(p for p in engine.programs if p.ctx.is_root)
        spec = root.call
        if spec is None or id(spec) in self.seen:
            return
        self.seen.add(id(spec))
        if spec.learning:
            temps = ", ".join(f"{t:.3g}" for t in spec.temps)
            print(f"barrier {record.barrier:4d}: learning call of {spec.length} at [{temps}]")
        else:
            lo, hi = spec.region
            print(f"barrier {record.barrier:4d}: final call of {spec.length} cooling {hi:.3g} -> {lo:.3g}")


def main() -> None:
    inst = gen_random_dcop(25, 0.3, 8, seed=3)
    params = DpsaParams(S_len=20, total_iterations=600, gb=GbParams(enabled=True, width=2.0))
    engine = Engine(inst, dpsa_factory(params), seed=1)
    trace = engine.run(10_000, CallLogger())
    print(f"final anytime cost {trace.anytime_series()[-1][1]}")


if __name__ == "__main__":
    main()
