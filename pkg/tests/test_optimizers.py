import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fusionsearch.genome import Genome
from fusionsearch.optimizers import (FitnessCache, FitnessError, GaConfig, OptimizerRunLog,
                                     PsoConfig, diversity, expected_mutations, inertia_schedule,
                                     mutation_schedule, ring_best, run_ga, run_pso,
                                     select_parents, tournament_draw, tournament_select,
                                     two_point_crossover, update_position, update_velocity)
from fusionsearch.seeding import derive_seed, pmap, process_map


def onemax(g: Genome) -> float:
    return float(sum(g.bits))


def flat(g: Genome) -> float:
    return 1.0


def test_schedules_closed_form():
    for g in range(1, 51):
        m = 0.2 - 0.2 * math.floor(g / 5) * 0.3
        assert mutation_schedule(g) == (0.01 if m < 0.01 else m)
        w = 0.9 - 0.9 * math.floor(g / 5) * 0.09
        assert inertia_schedule(g) == (0.4 if w < 0.4 else w)
    assert mutation_schedule(4) == 0.2 and mutation_schedule(20) == 0.01
    assert inertia_schedule(30) == pytest.approx(0.414) and inertia_schedule(35) == 0.4


def _brute_diversity(P):
    z, L = P.shape
    total = sum(int(np.sum(P[i] != P[j])) for i, j in itertools.combinations(range(z), 2))
    return total / (L * z * (z - 1) / 2)


@given(st.integers(2, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_diversity_matches_pairwise_hamming(z, L, seed):
    P = np.random.default_rng(seed).integers(0, 2, size=(z, L))
    assert diversity(P) == pytest.approx(_brute_diversity(P), rel=1e-12)


def test_diversity_extremes():
    assert diversity(np.zeros((5, 15), int)) == 0
    P = np.array([[0] * 15, [1] * 15])
    assert diversity(P) == 1
    with pytest.raises(ValueError):
        diversity(np.zeros((1, 15)))


def test_tournament_membership_frequency():
    # two independent uniform draws: P(index in tournament) = 1 - (1 - 1/z)^2
    z, n = 15, 400_000
    draws = tournament_draw(z, np.random.default_rng(0), size=n)
    freq = np.mean((draws == 0).any(axis=1))
    expect = 1 - (1 - 1 / z) ** 2
    assert abs(freq - expect) < 4 * math.sqrt(expect * (1 - expect) / n)


def test_tournament_prefers_fitter():
    rng = np.random.default_rng(1)
    wins = np.bincount([tournament_select(15, rng) for _ in range(30_000)], minlength=15) / 30_000
    # P(win) for rank k is ((z-k)^2 - (z-k-1)^2) / z^2
    expect = np.array([((15 - k) ** 2 - (14 - k) ** 2) / 225 for k in range(15)])
    np.testing.assert_allclose(wins, expect, atol=0.01)


@given(st.integers(0, 10_000))
def test_select_parents_distinct(seed):
    a, b = select_parents(15, np.random.default_rng(seed))
    assert a != b and 0 <= a < 15 and 0 <= b < 15


@given(st.integers(0, 10_000))
def test_two_point_crossover_structure(seed):
    rng = np.random.default_rng(seed)
    p1 = np.zeros(15, dtype=np.int8)
    p2 = np.ones(15, dtype=np.int8)
    child = two_point_crossover(p1, p2, rng)
    ones = np.flatnonzero(child)
    # one contiguous block from p2, possibly empty
    if ones.size:
        assert np.all(np.diff(ones) == 1)


def test_velocity_and_position_rules():
    rng = np.random.default_rng(0)
    v = np.array([0.5, -0.5, 0.0])
    x = np.array([0, 1, 0])
    out = update_velocity(v, x, x, x, 0.9, 0.6, 0.3, rng)
    np.testing.assert_allclose(out, 0.9 * v)
    hits = np.mean([update_position(np.full(15, 1.0), rng).mean() for _ in range(4000)])
    assert abs(hits - 1 / (1 + math.exp(-1))) < 0.01


@given(st.lists(st.floats(0, 1), min_size=3, max_size=20), st.data())
def test_ring_best(fit, data):
    k = data.draw(st.integers(0, len(fit) - 1))
    n = len(fit)
    j = ring_best(fit, k)
    hood = [(k - 1) % n, k, (k + 1) % n]
    assert j in hood and fit[j] == max(fit[h] for h in hood)


def test_fitness_cache_evaluates_once():
    calls = []

    def f(g):
        calls.append(g)
        return onemax(g)
    cache = FitnessCache(f)
    rows = np.random.default_rng(0).integers(0, 2, size=(10, 15))
    rows = np.concatenate([rows, rows[:4]])
    out = cache(rows)
    cache(rows)
    assert len(calls) == len(set(calls)) == len({tuple(r) for r in rows})
    np.testing.assert_array_equal(out, rows.sum(axis=1))


def test_fitness_failure_names_genome():
    def boom(g):
        raise RuntimeError("nan loss")
    with pytest.raises(FitnessError) as ei:
        run_ga(boom, GaConfig(seed=0))
    assert len(str(ei.value.genome)) == 15 and "nan loss" in str(ei.value)


@given(st.integers(0, 2**32 - 1))
def test_ga_elitism_and_cache_bound(seed):
    run = run_ga(onemax, GaConfig(seed=seed))
    trace = run.best_trace
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    steps = len(run.records) - 1
    assert run.distinct_evaluations <= 15 + steps * 13 <= 15 * (steps + 1)
    assert run.records[-1].evaluations == run.distinct_evaluations


@given(st.integers(0, 2**32 - 1))
def test_pso_trace_monotone_and_cache_bound(seed):
    run = run_pso(onemax, PsoConfig(seed=seed))
    trace = run.best_trace
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    assert run.distinct_evaluations <= 15 * len(run.records)


@pytest.mark.parametrize("runner,cfg", [(run_ga, GaConfig(seed=3)), (run_pso, PsoConfig(seed=3))])
def test_patience_stop(runner, cfg):
    run = runner(flat, cfg)
    assert run.stop_cause == "patience"
    assert len(run.records) - 1 == 15  # step 1 sets the best, then 14 idle steps
    assert run.records[-1].patience == 14


def test_runs_are_deterministic(tmp_path):
    a = run_ga(onemax, GaConfig(seed=11))
    b = run_ga(onemax, GaConfig(seed=11))
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for f in ("log.jsonl", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    back = OptimizerRunLog.read(tmp_path / "a")
    assert back.best_trace == a.best_trace and back.best_genome == a.best_genome
    assert "wall_time_s" not in json.loads((tmp_path / "a" / "summary.json").read_text())


def test_parallel_map_matches_serial():
    serial = run_pso(onemax, PsoConfig(seed=5, max_iterations=3))
    parallel = run_pso(onemax, PsoConfig(seed=5, max_iterations=3), map_fn=process_map(2))
    assert serial.records == parallel.records


def test_expected_mutation_count_long_run():
    counts = []
    cfg = GaConfig(seed=2, max_generations=3000, patience_max=10**9, mutation_decay=0.0,
                   initial_mutation_prob=0.2)
    run_ga(onemax, cfg, mutation_counter=counts)
    n = len(counts) * 13 * 15
    mean = expected_mutations(0.2, 15, 15) * len(counts)
    assert abs(sum(counts) - mean) < 3 * math.sqrt(n * 0.2 * 0.8)


def test_derive_seed_properties():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, 2, "a")
    assert derive_seed(1, "a") != derive_seed(2, "a")
    assert 0 <= derive_seed(2**64 - 1, "x") < 2**64


def _add(ctx, x):
    return ctx + x


def test_pmap_order_and_context():
    assert pmap(_add, range(6), 10, jobs=1) == pmap(_add, range(6), 10, jobs=3) == list(range(10, 16))
