import threading

import numpy as np
import pytest

from plkan import (Dataset, ParallelPlan, TrainConfig, average_models,
                   partition, run_round, train_clones, train_epoch,
                   train_parallel)
from plkan.parallel import (SCALING_CSV_HEADER, WorkerError, ScalingRow,
                            measure_strong_scaling, measure_weak_scaling,
                            read_scaling_csv, thread_compute_scaling,
                            write_scaling_csv)

from conftest import make_model


def make_dataset(rng, model, n):
    X = rng.uniform(0, 1, (n, model.input_dim))
    Z = rng.uniform(-1, 1, (n, model.output_dim))
    return Dataset(model.input_dim, model.output_dim, np.hstack([X, Z]))


# -- partition ----------------------------------------------------------------

def test_partition_single_batch_is_full_permutation(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 40)
    (batch,) = partition(data, threads=1, batch_size=40, round_index=0, seed=5)
    assert sorted(batch) == list(range(40))


def test_partition_disjoint_and_exact_sizes(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 100)
    batches = partition(data, threads=4, batch_size=20, round_index=2, seed=1)
    assert [len(b) for b in batches] == [20] * 4
    union = np.concatenate(batches)
    assert len(set(union.tolist())) == 80


def test_partition_deterministic(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 60)
    a = partition(data, 3, 10, round_index=4, seed=9)
    b = partition(data, 3, 10, round_index=4, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    c = partition(data, 3, 10, round_index=5, seed=9)
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_partition_insufficient_records(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 30)
    with pytest.raises(ValueError):
        partition(data, threads=4, batch_size=10, round_index=0, seed=0)


# -- run_round ----------------------------------------------------------------

def test_run_round_degenerate_matches_sequential_epoch(rng):
    model = make_model(rng, [4, 3, 1])
    data = make_dataset(rng, model, 64)
    batches = partition(data, 1, 64, round_index=0, seed=11)
    merged = run_round(model, data, batches, mu=0.5)
    sequential = model.copy()
    train_epoch(sequential, data, TrainConfig(mu=0.5, epochs=1, seed=11),
                epoch_index=0)
    np.testing.assert_array_equal(merged.flat_values, sequential.flat_values)


def test_run_round_identical_batches_merge_to_single_clone(rng):
    model = make_model(rng, [4, 2])
    data = make_dataset(rng, model, 50)
    batch = np.arange(25, dtype=np.int64)
    merged = run_round(model, data, [batch.copy() for _ in range(3)], mu=0.5)
    clone = model.copy()
    for i in batch:
        from plkan import train_record
        train_record(clone, data.inputs[i], data.targets[i], 0.5)
    np.testing.assert_array_equal(merged.flat_values, clone.flat_values)


def test_run_round_equals_mean_of_retained_clones(rng):
    model = make_model(rng, [4, 3, 2])
    data = make_dataset(rng, model, 90)
    batches = partition(data, 3, 30, round_index=1, seed=2)
    clones = train_clones(model, data, batches, mu=0.6)
    merged = run_round(model, data, batches, mu=0.6)
    np.testing.assert_array_equal(
        merged.flat_values, average_models(clones).flat_values)


def test_run_round_does_not_mutate_input_model(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 30)
    before = model.flat_values.copy()
    run_round(model, data, partition(data, 2, 10, 0, 0), mu=0.9)
    np.testing.assert_array_equal(model.flat_values, before)


def test_worker_failure_names_the_worker(rng, monkeypatch):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 30)
    import plkan.parallel as par

    calls = {"n": 0}
    real = par._kernels.train_batch

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("boom")
        return real(*args, **kwargs)

    monkeypatch.setattr(par._kernels, "train_batch", flaky)
    with pytest.raises(WorkerError, match=r"worker \d"):
        train_clones(model, data, partition(data, 3, 10, 0, 0), mu=0.5)


# -- train_parallel -----------------------------------------------------------

def test_train_parallel_mu_zero_keeps_initial_model(rng):
    model = make_model(rng, [4, 2, 1])
    data = make_dataset(rng, model, 80)
    plan = ParallelPlan(threads=2, rounds=5, batch_size=20, seed=3, mu=0.0)
    trained, reports = train_parallel(model, data, None, plan)
    np.testing.assert_array_equal(trained.flat_values, model.flat_values)
    assert len(reports) == 5


def test_train_parallel_processes_planned_records(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 100)
    plan = ParallelPlan(threads=2, rounds=4, batch_size=10, seed=1, mu=0.5)
    _, reports = train_parallel(model, data, None, plan)
    total = sum(sum(r.worker_records) for r in reports)
    assert total == plan.total_records == 80


def test_train_parallel_bit_reproducible(rng):
    model = make_model(rng, [4, 3, 1])
    data = make_dataset(rng, model, 120)
    val = make_dataset(rng, model, 40)
    plan = ParallelPlan(threads=3, rounds=4, batch_size=20, seed=8, mu=0.5)
    a, rep_a = train_parallel(model, data, val, plan)
    b, rep_b = train_parallel(model, data, val, plan)
    np.testing.assert_array_equal(a.flat_values, b.flat_values)
    assert [r.pearson_pct for r in rep_a] == [r.pearson_pct for r in rep_b]


def test_train_parallel_equals_sequential_epochs(rng):
    # threads=1, batch=dataset, rounds=E is the sequential E-epoch trainer
    model = make_model(rng, [4, 3, 1])
    data = make_dataset(rng, model, 75)
    plan = ParallelPlan(threads=1, rounds=3, batch_size=75, seed=21, mu=0.45)
    par_model, _ = train_parallel(model, data, None, plan)
    seq_model = model.copy()
    cfg = TrainConfig(mu=0.45, epochs=3, seed=21)
    for epoch in range(3):
        train_epoch(seq_model, data, cfg, epoch_index=epoch)
    np.testing.assert_array_equal(par_model.flat_values, seq_model.flat_values)


def test_train_parallel_stop_event_discards_round(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 40)
    stop = threading.Event()
    stop.set()
    plan = ParallelPlan(threads=2, rounds=6, batch_size=10, seed=0, mu=0.5)
    trained, reports = train_parallel(model, data, None, plan, stop_event=stop)
    assert reports == []
    np.testing.assert_array_equal(trained.flat_values, model.flat_values)


def test_train_parallel_rejects_oversized_plan(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 30)
    plan = ParallelPlan(threads=4, rounds=1, batch_size=10, seed=0, mu=0.5)
    with pytest.raises(ValueError):
        train_parallel(model, data, None, plan)


# -- scaling harness ----------------------------------------------------------

def test_strong_scaling_rows_and_speedup(rng):
    model = make_model(rng, [4, 2, 1])
    data = make_dataset(rng, model, 200)
    val = make_dataset(rng, model, 50)
    rows = measure_strong_scaling(
        data, val, model.copy,
        cells=[(1, 2, 100), (2, 2, 50)], mu=0.5, seed=4)
    assert [r.threads for r in rows] == [1, 2]
    assert rows[0].ratio == 1.0
    assert all(t * r.rounds * r.batch_size == 200
               for t, r in zip((1, 2), rows))


def test_strong_scaling_requires_fixed_work(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 100)
    with pytest.raises(ValueError, match="equal total work"):
        measure_strong_scaling(data, data, model.copy,
                               cells=[(1, 2, 50), (2, 2, 50)])


def test_strong_scaling_skips_infeasible_cells(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 60)
    rows = measure_strong_scaling(
        data, None, model.copy,
        cells=[(1, 2, 60), (2, 2, 30), (2, 1, 60)], mu=0.5)
    # the (2, 1, 60) round would need 120 records at once, dataset has 60
    assert [(r.threads, r.rounds) for r in rows] == [(1, 2), (2, 2)]


def test_weak_scaling_rows(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 100)
    rows = measure_weak_scaling(data, None, model.copy, thread_counts=[1, 2],
                                rounds=2, batch_size=30, mu=0.5)
    assert [r.threads for r in rows] == [1, 2]
    assert rows[0].ratio == 1.0
    assert rows[1].ratio == pytest.approx(rows[0].time_s / rows[1].time_s)


def test_scaling_baseline_required(rng):
    model = make_model(rng, [3, 1])
    data = make_dataset(rng, model, 100)
    with pytest.raises(ValueError, match="1-thread"):
        measure_weak_scaling(data, None, model.copy, thread_counts=[2],
                             rounds=1, batch_size=10)


def test_scaling_csv_roundtrip(tmp_path):
    rows = [ScalingRow(1, 10, 100000, 96.78912345678901, 5.4321, 1.0),
            ScalingRow(4, 10, 25000, 96.1, 1.32, 4.114393939393939)]
    path = tmp_path / "scaling.csv"
    write_scaling_csv(rows, path)
    header = path.read_text().splitlines()[0]
    assert header == SCALING_CSV_HEADER
    back = read_scaling_csv(path)
    assert back == rows


def test_thread_probe_returns_sane_value():
    s = thread_compute_scaling(threads=2, work=2_000_000)
    assert 0.5 < s <= 2.5
