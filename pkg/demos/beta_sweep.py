"""Sweep AED's mutation exponent beta on one capped colouring instance.

Run with ``python3 demos/beta_sweep.py``; prints the mean final cost per beta.
"""

from __future__ import annotations

import numpy as np

from popdcop.benchgen import gen_graph_coloring
from popdcop.experiment import AlgorithmConfig, expand_beta_sweep, run_single


def main(seeds: int = 3, iterations: int = 100) -> None:
    inst = gen_graph_coloring(30, 0.1, 3, global_cap={"cap": 10, "penalty": 500}, seed=4)
    for alg in expand_beta_sweep(AlgorithmConfig("AED", "aed", {"beta_sweep": [1, 3, 6, 12]})):
        finals = [run_single(inst, alg, s, iterations).final_cost for s in range(seeds)]
        print(f"{alg.name:8s} mean final {np.mean(finals):8.1f}  runs {finals}")


if __name__ == "__main__":
    main()
