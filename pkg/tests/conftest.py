from __future__ import annotations

import numpy as np
import pytest

from popdcop.model import DcopInstance, four_agent_example, validate_instance


@pytest.fixture
def four_agent() -> DcopInstance:
    return four_agent_example()


def random_small_instance(
    seed: int,
    max_agents: int = 6,
    max_domain: int = 4,
    cap: bool = False,
) -> DcopInstance:
    """Connected random instance small enough for exhaustive search.

    A random spanning tree guarantees connectivity; extra edges are added
    with probability one half. Domains may differ between agents.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_agents + 1))
    domains = rng.integers(2, max_domain + 1, size=n).tolist()
    edges = {(int(rng.integers(k)), k) for k in range(1, n)}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.5:
                edges.add((i, j))
    raw = {
        "agents": n,
        "domains": domains,
        "constraints": [
            {"i": i, "j": j, "table": rng.integers(0, 31, size=(domains[i], domains[j])).tolist()}
            for i, j in sorted(edges)
        ],
    }
    if cap:
        raw["global_cap"] = {"cap": max(1, n // max(domains)), "penalty": 40}
    return validate_instance(raw)


def population_costs(instance: DcopInstance, values: np.ndarray) -> np.ndarray:
    """Global cost of every row of ``values``, computed directly from the tables."""
    values = np.asarray(values, dtype=np.int64)
    costs = np.zeros(len(values), dtype=np.int64)
    for (i, j), table in instance.tables.items():
        costs += table[values[:, i], values[:, j]]
    cap = instance.global_cap
    if cap is not None:
        for v in range(instance.max_domain):
            count = (values == v).sum(axis=1)
            costs += cap.penalty * np.maximum(count - cap.cap, 0)
    return costs
