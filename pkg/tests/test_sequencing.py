import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chi2

from adb.errors import InputError, ScoringError, StepError
from adb.sequencing import (
    BATCHWISE, CUMULATIVE, BatchSchedule, Permutation, ScoringRun, Subsampler, batchwise_trajectory,
    cumulative_trajectory, generate_permutations, permutation_for, score_all,
)
from adb.transport import PointCloud, SinkhornConfig, debiased_distance


def test_permutation_must_be_bijection():
    Permutation([2, 0, 1], 0)
    with pytest.raises(InputError):
        Permutation([0, 0, 1], 0)
    with pytest.raises(InputError):
        Permutation([1, 2, 3], 0)


@given(st.integers(1, 50), st.integers(1, 20))
def test_batch_schedule_covers_each_position_once(n, b):
    sched = BatchSchedule(n, b)
    assert sched.step_count == -(-n // b)
    pos = np.concatenate([np.arange(n)[sched.batch_slice(t)] for t in range(1, sched.step_count + 1)])
    assert np.array_equal(pos, np.arange(n))
    last = sched.batch_slice(sched.step_count)
    assert last.stop - last.start == min(b, n - (sched.step_count - 1) * b)


def test_batch_schedule_rejects_out_of_range_step():
    with pytest.raises(InputError):
        BatchSchedule(10, 3).batch_slice(5)


# ---------------------------------------------------------- permutations

def test_single_element_permutations():
    perms = generate_permutations(1, 4, seed=3)
    assert [p.order.tolist() for p in perms] == [[0]] * 4


def test_permutations_are_deterministic_and_prefix_stable():
    a = generate_permutations(30, 5, seed=11)
    b = generate_permutations(30, 5, seed=11)
    assert a == b
    # Permutation m depends only on (seed, m).
    assert generate_permutations(30, 8, seed=11)[:5] == a
    assert permutation_for(30, 11, 3) == a[3]
    assert generate_permutations(30, 5, seed=12) != a


def test_permutation_positions_are_uniform():
    N, M = 52, 10_000
    counts = np.zeros((N, N))
    for p in generate_permutations(N, M, seed=2024):
        counts[p.order, np.arange(N)] += 1
    expected = M / N
    stat = ((counts - expected) ** 2 / expected).sum()
    dof = (N - 1) ** 2
    assert chi2.sf(stat, dof) > 0.01


def test_generate_permutations_validates():
    with pytest.raises(InputError):
        generate_permutations(0, 3, 0)
    with pytest.raises(InputError):
        generate_permutations(3, 0, 0)


# ----------------------------------------------------------- trajectories

def test_single_step_trajectories_are_zero():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 2))
    perm = permutation_for(12, 0, 0)
    assert abs(cumulative_trajectory(perm, X, 12).values[0]) <= 1e-8
    assert abs(batchwise_trajectory(perm, X, 12).values[0]) <= 1e-8


def test_identical_latents_give_zero_trajectory():
    X = np.full((10, 3), 1.5)
    tr = batchwise_trajectory(permutation_for(10, 0, 1), X, 3)
    assert np.all(tr.values == 0.0)


def test_hand_instance_matches_direct_transport_calls():
    X = np.array([[0.0], [0.0], [10.0], [10.0]])
    perm = Permutation([2, 3, 0, 1], 0)
    cfg = SinkhornConfig()
    G = PointCloud(X)
    cum = cumulative_trajectory(perm, X, 2, cfg)
    bat = batchwise_trajectory(perm, X, 2, cfg)
    first = debiased_distance(PointCloud(X[[2, 3]]), G, cfg)
    assert cum.values[0] == pytest.approx(first, abs=1e-12)
    assert bat.values[0] == pytest.approx(first, abs=1e-12)
    assert bat.values[1] == pytest.approx(debiased_distance(PointCloud(X[[0, 1]]), G, cfg), abs=1e-12)
    assert abs(cum.values[1]) <= 1e-6
    # A Dirac at 10 against {0, 10} halves: W = 5 and the self terms vanish.
    assert first == pytest.approx(2 * 5.0 - 0.0 - 0.0, rel=1e-3)


@given(st.integers(6, 40), st.integers(1, 8), st.integers(0, 1000))
def test_cumulative_terminal_anchor(n, b, seed):
    X = np.random.default_rng(seed).normal(size=(n, 2))
    tr = cumulative_trajectory(permutation_for(n, seed, 0), X, b)
    assert len(tr) == -(-n // b)
    assert abs(tr.values[-1]) <= 1e-6
    assert np.all(np.isfinite(tr.values))


def test_batch_exchangeability():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 2))
    perm = permutation_for(20, 5, 0)
    blocks = perm.order.reshape(4, 5)
    swapped = Permutation(blocks[[2, 0, 3, 1]].ravel(), 1)
    v = batchwise_trajectory(perm, X, 5).values
    w = batchwise_trajectory(swapped, X, 5).values
    assert np.allclose(w, v[[2, 0, 3, 1]], rtol=0, atol=1e-12)


@pytest.mark.parametrize("mode", [CUMULATIVE, BATCHWISE])
def test_trajectory_scales_with_latents(mode):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(24, 2))
    c = 2.5
    run = score_all(X, 6, 3, seed=4, mode=mode, cfg=SinkhornConfig(epsilon=0.05), workers=1)
    run_c = score_all(c * X, 6, 3, seed=4, mode=mode, cfg=SinkhornConfig(epsilon=0.05 * c), workers=1)
    assert np.allclose(run_c.values, c * run.values, rtol=1e-6, atol=1e-9)


def test_step_errors_carry_the_step():
    X = np.random.default_rng(3).normal(size=(30, 2))
    cfg = SinkhornConfig(epsilon=1e-4, max_iterations=1, feasibility_tolerance=1e-15)
    with pytest.raises(StepError) as info:
        batchwise_trajectory(permutation_for(30, 0, 0), X, 10, cfg)
    assert info.value.step == 1
    assert info.value.permutation_id == 0


def test_trajectory_rejects_non_finite_latents():
    X = np.zeros((4, 1))
    X[2, 0] = np.nan
    with pytest.raises(InputError):
        batchwise_trajectory(permutation_for(4, 0, 0), X, 2)


# -------------------------------------------------------------- score_all

def test_score_all_single_permutation_matches_direct_call():
    X = np.random.default_rng(4).normal(size=(25, 3))
    run = score_all(X, 5, 1, seed=9, mode=CUMULATIVE, workers=1)
    direct = cumulative_trajectory(permutation_for(25, 9, 0), X, 5)
    assert np.array_equal(run.values[0], direct.values)


def test_score_all_invariant_to_worker_count():
    X = np.random.default_rng(5).normal(size=(40, 2))
    one = score_all(X, 8, 6, seed=1, workers=1)
    many = score_all(X, 8, 6, seed=1, workers=3)
    assert one.to_json() == many.to_json()


def test_score_all_aggregates_failures():
    X = np.random.default_rng(6).normal(size=(30, 2))
    cfg = SinkhornConfig(epsilon=1e-4, max_iterations=1, feasibility_tolerance=1e-15)
    with pytest.raises(ScoringError) as info:
        score_all(X, 10, 3, seed=0, cfg=cfg, workers=1)
    assert len(info.value.failures) == 3


def test_global_measure_is_shared():
    X = np.random.default_rng(7).normal(size=(30, 2))
    run = score_all(X, 10, 4, seed=0, workers=1)
    assert run.global_cloud_digest == PointCloud(X).digest()


def test_scoring_run_json_round_trip():
    X = np.random.default_rng(8).normal(size=(20, 2))
    run = score_all(X, 5, 3, seed=2, workers=1)
    back = ScoringRun.from_json(run.to_json())
    assert back.to_json() == run.to_json()
    assert np.array_equal(back.values, run.values)
    doc = run.to_dict()
    assert {"seed", "mode", "B", "M", "values"} <= set(doc)


def test_scoring_run_from_dict_rejects_ragged():
    with pytest.raises(InputError):
        ScoringRun.from_dict({"seed": 0, "mode": "batchwise", "B": 2, "M": 2, "values": [[1.0], [1.0, 2.0]]})


# ------------------------------------------------------------- subsample

def test_subsampler_is_consistent_and_bounded():
    s = Subsampler(100, 20, seed=3)
    full = s.reduce(np.arange(100))
    assert len(full) == 20
    assert np.array_equal(s.reduce(np.arange(100)), full)
    small = np.arange(15)
    assert np.array_equal(s.reduce(small), small)
    # A prefix whose kept members include the global subsample maps onto it.
    assert set(s.reduce(np.arange(60))) >= set(full) & set(range(60))


def test_subsample_cap_must_cover_batch():
    with pytest.raises(InputError):
        score_all(np.zeros((20, 1)), 10, 2, seed=0, subsample_cap=5)


def test_subsampled_terminal_step_is_zero():
    X = np.random.default_rng(9).normal(size=(80, 2))
    run = score_all(X, 10, 3, seed=1, mode=CUMULATIVE, subsample_cap=30, workers=1)
    assert np.all(np.abs(run.values[:, -1]) <= 1e-6)
    assert run.subsample_cap == 30


def test_batchwise_is_faster_than_cumulative():
    X = np.random.default_rng(10).normal(size=(200, 4))
    t0 = time.perf_counter()
    score_all(X, 20, 20, seed=0, mode=BATCHWISE, workers=1)
    t_batch = time.perf_counter() - t0
    t0 = time.perf_counter()
    score_all(X, 20, 20, seed=0, mode=CUMULATIVE, workers=1)
    t_cum = time.perf_counter() - t0
    assert t_batch < t_cum


def test_cumulative_step_cost_grows_while_batchwise_is_flat():
    X = np.random.default_rng(11).normal(size=(400, 4))
    perm = permutation_for(400, 0, 0)
    from adb.sequencing import _global_cloud, _trajectory
    from adb.transport import sinkhorn
    cfg = SinkhornConfig()
    G = _global_cloud(X, None)
    w = sinkhorn(G, G, cfg)[1]
    cum = _trajectory(perm, X, 40, cfg, CUMULATIVE, G, w, None, timed=True).step_seconds
    bat = _trajectory(perm, X, 40, cfg, BATCHWISE, G, w, None, timed=True).step_seconds
    assert cum[5:-1].mean() > 2 * cum[:2].mean()
    assert bat[-3:].mean() < 3 * bat[:3].mean()


def test_worker_count_environment_override(monkeypatch):
    from adb.sequencing import default_workers
    monkeypatch.setenv("ADB_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("ADB_THREADS", "zero")
    with pytest.raises(InputError):
        default_workers()
    monkeypatch.setenv("ADB_THREADS", "0")
    with pytest.raises(InputError):
        default_workers()
