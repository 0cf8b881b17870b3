from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import population_costs, random_small_instance
from popdcop.aed import (
    UNASSIGNED,
    AedParams,
    AedProgram,
    AnytimeRegistry,
    Individual,
    aed_factory,
    merge,
    merge_sets,
    migrate,
    mutation_costs,
    mutation_distribution,
    reinsert,
    reproduce,
    selection_distribution,
)
from popdcop.engine import Engine, ProtocolError, build_engine
from popdcop.model import GlobalCapConstraint, evaluate_global_cost, four_agent_example, local_cost, validate_instance

U = UNASSIGNED


# -- merge --------------------------------------------------------------------------


def test_merge_example():
    a3 = Individual([U, U, 0, U], 0)
    from_nbrs = Individual([0, 1, U, U], 0)
    assert merge(a3, from_nbrs) == Individual([0, 1, 0, U], 0)


def test_merge_identity_and_additivity():
    ind = Individual([0, 1, 0, U], 7)
    assert merge(ind, Individual.empty(4)) == ind
    assert merge(Individual([0, U], 20), Individual([U, 1], 11)).fitness == 31
    assert not ind.complete and Individual([0, 1], 0).complete


def test_merge_disagreement_is_fatal():
    with pytest.raises(ProtocolError):
        merge(Individual([0, 1], 0), Individual([1, U], 0))


def test_merge_sets_indexwise():
    s1 = [Individual([0, U], 1), Individual([1, U], 2)]
    s2 = [Individual([U, 1], 10), Individual([U, 0], 20)]
    assert merge_sets(s1, s2) == [Individual([0, 1], 11), Individual([1, 0], 22)]
    with pytest.raises(ValueError):
        merge_sets(s1, s2[:1])


# -- distributions --------------------------------------------------------------------


def test_equal_costs_give_uniform():
    assert mutation_distribution([5, 5, 5, 5], 3, 1).tolist() == [0.25] * 4
    assert selection_distribution([9, 9], 3, 1).tolist() == [0.5, 0.5]


def test_distribution_rows_sum_to_one():
    rng = np.random.default_rng(0)
    c = rng.integers(0, 100, size=(20, 5))
    p = mutation_distribution(c, 2.5, 1.0)
    assert np.allclose(p.sum(axis=1), 1)
    # cheaper values are never less likely
    order = np.argsort(c, axis=1, kind="stable")
    assert (np.diff(np.take_along_axis(p, order, axis=1), axis=1) <= 1e-15).all()


def test_selection_requires_population():
    with pytest.raises(ValueError):
        selection_distribution([], 3, 1)


def test_reinsert_frequencies():
    rng = np.random.default_rng(0)
    draws = reinsert(np.array([16, 30, 40]), 100_000, 1, 1, rng)
    freq = np.bincount(draws, minlength=3) / 100_000
    assert np.allclose(freq, [0.676, 0.297, 0.027], atol=0.01)


def test_reinsert_alpha_zero_is_uniform():
    rng = np.random.default_rng(1)
    draws = reinsert(np.array([1, 50, 900, 4]), 80_000, 0, 1, rng)
    assert np.allclose(np.bincount(draws) / 80_000, 0.25, atol=0.01)


def test_reinsert_single_individual():
    rng = np.random.default_rng(2)
    assert reinsert(np.array([42]), 7, 3, 1, rng).tolist() == [0] * 7


# -- migration ------------------------------------------------------------------------


def test_migrate_single_neighbour():
    blocks = migrate(3, 1, 3, np.random.default_rng(0))
    assert len(blocks) == 1 and sorted(blocks[0].tolist()) == [0, 1, 2]


def test_migrate_conservation_and_size_check():
    blocks = migrate(12, 4, 3, np.random.default_rng(0))
    assert [len(b) for b in blocks] == [3] * 4
    assert sorted(np.concatenate(blocks).tolist()) == list(range(12))
    with pytest.raises(ValueError):
        migrate(5, 2, 3, np.random.default_rng(0))


def test_migrate_uniform_bijection():
    counts = np.zeros((3, 3))
    for seed in range(10_000):
        for nbr, block in enumerate(migrate(3, 3, 1, np.random.default_rng(seed))):
            counts[block[0], nbr] += 1
    assert np.allclose(counts / 10_000, 1 / 3, atol=0.02)


# -- mutation against the tables -----------------------------------------------------------


def _ctx(instance, agent):
    return build_engine(instance, lambda ctx: AedProgram(ctx, AedParams()), 0).contexts[agent]


def test_mutation_costs_four_agent(four_agent):
    ctx = _ctx(four_agent, 2)
    costs = mutation_costs(ctx, np.array([[0, 1, 1, 1]]))
    assert costs.tolist() == [[20, 31]]


def test_reproduce_fitness_update(four_agent):
    ctx = _ctx(four_agent, 2)
    rng = np.random.default_rng(0)
    values = np.tile([0, 1, 1, 1], (400, 1))
    fitness = np.full(400, 49)
    child, fit = reproduce(ctx, values, fitness, AedParams(beta=1), rng)
    moved = child[:, 2] == 0
    assert moved.any() and (~moved).any()
    assert (fit[moved] == 38).all() and (fit[~moved] == 49).all()
    assert np.array_equal(child[:, [0, 1, 3]], values[:, [0, 1, 3]])
    # with beta = 1 the cheaper value wins (31 - 20 + 1) / (11 + 1) of the time
    assert abs(moved.mean() - 12 / 13) < 0.05


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), cap=st.booleans())
def test_mutation_cost_differences_are_global_differences(seed, cap):
    inst = random_small_instance(seed, cap=cap)
    rng = np.random.default_rng(seed)
    agent = int(rng.integers(inst.n_agents))
    ctx = _ctx(inst, agent)
    values = np.stack([rng.integers(0, d, size=5) for d in inst.domain_sizes], axis=1)
    costs = mutation_costs(ctx, values)
    base = population_costs(inst, values)
    for d in range(inst.domain_sizes[agent]):
        moved = values.copy()
        moved[:, agent] = d
        expect = population_costs(inst, moved) - base
        got = costs[:, d] - costs[np.arange(5), values[:, agent]]
        assert got.tolist() == expect.tolist()
    if not cap:
        for row, c in zip(values, costs):
            nbrs = {j: int(row[j]) for j in inst.neighbors[agent]}
            assert c.tolist() == [local_cost(inst, agent, d, nbrs) for d in range(inst.domain_sizes[agent])]


# -- anytime registry ---------------------------------------------------------------------


def test_registry_window_and_versions():
    reg = AnytimeRegistry(height=2)
    a, b = Individual([0], 10), Individual([1], 5)
    reg.store(3, a)
    reg.store(5, b)
    assert reg.lookup(4) is a and reg.lookup(5) is b and reg.lookup(2) is None
    with pytest.raises(ProtocolError):
        reg.store(4, a)
    reg.Itr = 9
    reg.prune()
    assert reg.lookup(9) is b  # the latest version stays valid past the window


def test_registry_tie_goes_to_lower_finder():
    reg = AnytimeRegistry(height=2)
    found = [(Individual([1, 0], 7), 3), (Individual([0, 1], 7), 1), (Individual([1, 1], 9), 0)]
    for ind, finder in sorted(found, key=lambda f: (f[0].fitness, f[1])):
        reg.offer(ind, finder)
    assert reg.LB_finder == 1 and reg.LB.fitness == 7


# -- whole runs ------------------------------------------------------------------------------


class _Recorder:
    """Observer storing what each AED agent held at every barrier."""

    def __init__(self):
        self.partials = {}
        self.pops = []

    def __call__(self, engine, record):
        if record.barrier == 1:
            # partial populations sent up the tree in phase 1
            self.partials = {
                e.sender: e.payload.rows for e in engine.pending if type(e.payload).__name__ == "PopulationMsg"
            }
        self.pops.append([p.pop.copy() for p in engine.programs])


def test_init_partial_and_final_fitness(four_agent):
    rec = _Recorder()
    eng = Engine(four_agent, aed_factory(AedParams(IN=16, iterations=3)), 7, root=3)
    eng.run(100, rec)
    n = four_agent.n_agents
    # a3 (id 2) is a leaf under root x4 and reports its partial straight away
    part = rec.partials[2]
    for row in part:
        nbrs = {j: int(row[j]) for j in four_agent.neighbors[2]}
        assert row[n] == local_cost(four_agent, 2, int(row[2]), nbrs)
        assert row[3] == U
    first = next(pops for pops in rec.pops if all(len(p) for p in pops))
    root_pop = first[3]
    assert root_pop.shape == (16, n + 1)
    assert (root_pop[:, :n] != U).all()
    assert root_pop[:, n].tolist() == population_costs(four_agent, root_pop[:, :n]).tolist()


def test_init_with_cap_matches_global_cost():
    inst = four_agent_example(GlobalCapConstraint(1, 500))
    rec = _Recorder()
    eng = Engine(inst, aed_factory(AedParams(IN=8, iterations=2)), 3)
    eng.run(100, rec)
    first = next(pops for pops in rec.pops if all(len(p) for p in pops))
    for pop in first:
        assert pop[:, 4].tolist() == population_costs(inst, pop[:, :4]).tolist()


def test_in1_two_agents_share_one_individual():
    inst = validate_instance({"agents": 2, "domains": [3, 3],
                              "constraints": [{"i": 0, "j": 1, "table": [[1, 2, 3], [4, 5, 6], [7, 8, 9]]}]})
    rec = _Recorder()
    eng = Engine(inst, aed_factory(AedParams(IN=1, iterations=1)), 5)
    eng.run(50, rec)
    first = next(pops for pops in rec.pops if all(len(p) for p in pops))
    assert first[0].shape == (1, 3)
    assert np.array_equal(first[0], first[1])
    assert first[0][0, 2] == evaluate_global_cost(inst, first[0][0, :2])


def test_population_size_and_message_bound():
    inst = random_small_instance(8, max_agents=7)
    params = AedParams(ER=2, iterations=40)
    eng = Engine(inst, aed_factory(params), 1)
    trace = eng.run(2000)
    assert eng.done()
    start = eng.programs[0].start
    deg = [len(n) for n in inst.neighbors]
    for p, d in zip(eng.programs, deg):
        assert len(p.pop) == d * params.ER
    for rec in trace.records:
        if start <= rec.barrier < start + params.iterations:
            assert all(m <= 2 * d for m, d in zip(rec.messages, deg))


def test_four_agent_reaches_optimum():
    four_agent = four_agent_example()
    hits = 0
    for seed in range(20):
        eng = Engine(four_agent, aed_factory(AedParams(iterations=50)), seed)
        trace = eng.run(1000)
        assert eng.done()
        hits += trace.anytime_series()[-1][1] == 19
    assert hits >= 19


def test_params_validation_and_from_dict():
    assert AedParams.from_dict({"beta": 5, "unknown": 1}).beta == 5
    for bad in ({"IN": 0}, {"ER": 0}, {"alpha": -1}, {"beta": -1}, {"epsilon": 0}):
        with pytest.raises(ValueError):
            AedParams(**bad)
