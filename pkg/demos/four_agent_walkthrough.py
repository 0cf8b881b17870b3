"""Solve the four-agent example with every algorithm and show the anytime curves.

Run with ``python3 demos/four_agent_walkthrough.py``.
"""

from __future__ import annotations

from popdcop.experiment import ALGORITHM_PRESETS, run_single
from popdcop.model import brute_force_optimum, evaluate_global_cost, four_agent_example


def main() -> None:
    inst = four_agent_example()
    best, opt = brute_force_optimum(inst, 1000)
    print(f"optimum {opt} at {best}; cost of (0,1,0,1) is {evaluate_global_cost(inst, [0, 1, 0, 1])}")
    for name, alg in ALGORITHM_PRESETS.items():
        res = run_single(inst, alg, seed=0, iterations=60, instance_id="four_agent")
        curve = " ".join(f"{it}:{c}" for it, c in res.series[:: max(1, len(res.series) // 6)])
        print(f"{name:8s} final={res.final_cost:3d} assignment={res.assignment.tolist()}  curve {curve}")


if __name__ == "__main__":
    main()
