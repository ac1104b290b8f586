"""Disjoint-batch train-and-merge parallelism and the scaling harness.

Each round draws disjoint record batches, trains one private clone of
the model per batch on its own worker thread, and replaces the model
with the per-parameter mean of the trained clones.  The training kernel
releases the GIL, so worker threads genuinely run concurrently.
"""

from __future__ import annotations

import csv
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import Dataset, model_pearson
from .model import KanModel, average_models
from .training import record_permutation

log = logging.getLogger(__name__)

SCALING_CSV_HEADER = "threads,rounds,batch_size,pearson_pct,time_s,speedup_or_efficiency"


class WorkerError(RuntimeError):
    """A round worker raised; the round is aborted."""


@dataclass(frozen=True)
class ParallelPlan:
    """How much work to run per round and for how many rounds."""

    threads: int
    rounds: int
    batch_size: int
    seed: int = 0
    mu: float = 0.5

    def __post_init__(self):
        if self.threads < 1 or self.rounds < 1 or self.batch_size < 1:
            raise ValueError("threads, rounds and batch_size must be >= 1")

    @property
    def records_per_round(self) -> int:
        return self.threads * self.batch_size

    @property
    def total_records(self) -> int:
        return self.records_per_round * self.rounds


@dataclass
class RoundReport:
    round_index: int
    worker_records: list[int]
    pearson_pct: float
    time_s: float


@dataclass
class ScalingRow:
    threads: int
    rounds: int
    batch_size: int
    pearson_pct: float
    time_s: float
    ratio: float  # speedup (strong) or efficiency (weak), both t(1)/t(n)


def partition(data: Dataset, threads: int, batch_size: int,
              round_index: int, seed) -> list[np.ndarray]:
    """Disjoint equal-size index batches for one round.

    A fresh seeded permutation of the whole dataset is drawn each round
    (seed combined with the round index) and its first
    ``threads * batch_size`` entries are split contiguously, so batches
    are disjoint within a round and every record keeps a chance to be
    picked in later rounds.
    """
    need = threads * batch_size
    if need > data.record_count:
        raise ValueError(
            f"{threads} batches of {batch_size} need {need} records, "
            f"dataset has {data.record_count}"
        )
    perm = record_permutation(seed, round_index, data.record_count)
    return list(perm[:need].reshape(threads, batch_size))


def train_clones(model: KanModel, data: Dataset, batches, mu: float,
                 executor: ThreadPoolExecutor | None = None) -> list[KanModel]:
    """Train one private clone per batch; the input model is untouched.

    Clones are independent, so the result is the same no matter how the
    workers get scheduled.
    """
    if len(batches) == 0:
        raise ValueError("need at least one batch")
    clones = [model.copy() for _ in batches]

    def work(args):
        clone, batch = args
        prior = np.empty(len(batch))
        _kernels.train_batch(*clone._kernel_args(), data.inputs, data.targets,
                             np.asarray(batch, dtype=np.int64), mu, prior)
        return clone

    jobs = list(zip(clones, batches))
    if len(jobs) == 1:
        work(jobs[0])
        return clones
    own_pool = executor is None
    if own_pool:
        executor = ThreadPoolExecutor(max_workers=len(jobs))
    try:
        futures = [executor.submit(work, job) for job in jobs]
        for w, fut in enumerate(futures):
            try:
                fut.result()
            except Exception as exc:
                raise WorkerError(f"worker {w} failed: {exc}") from exc
    finally:
        if own_pool:
            executor.shutdown()
    return clones


def run_round(model: KanModel, data: Dataset, batches, mu: float,
              executor: ThreadPoolExecutor | None = None) -> KanModel:
    """One train-and-merge round; returns the merged model."""
    return average_models(train_clones(model, data, batches, mu, executor))


def train_parallel(model: KanModel, data: Dataset, val_data: Dataset | None,
                   plan: ParallelPlan,
                   stop_event: threading.Event | None = None,
                   on_round=None) -> tuple[KanModel, list[RoundReport]]:
    """Run ``plan.rounds`` partition/train/merge rounds.

    Validation accuracy is computed after each round but outside the
    timed section; round times cover training and merging only.  When
    ``stop_event`` is set, the current round is discarded and the model
    merged so far is returned with the reports collected so far.
    """
    if data.input_dim != model.input_dim or data.output_dim != model.output_dim:
        raise ValueError(
            f"dataset dims {data.input_dim}->{data.output_dim} do not match "
            f"model {model.input_dim}->{model.output_dim}"
        )
    if plan.records_per_round > data.record_count:
        raise ValueError(
            f"plan needs {plan.records_per_round} records per round, "
            f"dataset has {data.record_count}"
        )
    _kernels.warmup()
    current = model.copy()
    reports: list[RoundReport] = []
    pool = ThreadPoolExecutor(max_workers=plan.threads)
    try:
        for rd in range(plan.rounds):
            batches = partition(data, plan.threads, plan.batch_size, rd, plan.seed)
            t0 = time.perf_counter()
            merged = run_round(current, data, batches, plan.mu, pool)
            elapsed = time.perf_counter() - t0
            if stop_event is not None and stop_event.is_set():
                log.warning("interrupted: discarding round %d", rd)
                break
            current = merged
            pearson = float("nan")
            if val_data is not None:
                pearson = float(np.mean(model_pearson(current, val_data)))
            report = RoundReport(rd, [len(b) for b in batches], pearson, elapsed)
            reports.append(report)
            if on_round is not None:
                on_round(report)
    finally:
        pool.shutdown()
    return current, reports


# -- scaling harness -------------------------------------------------------

def _feasible(cell, data: Dataset) -> str | None:
    threads, rounds, batch = cell
    if threads < 1 or rounds < 1 or batch < 1:
        return "threads, rounds and batch_size must be >= 1"
    if threads * batch > data.record_count:
        return (f"needs {threads * batch} records per round, "
                f"dataset has {data.record_count}")
    return None


def _run_cells(cells, data, val_data, model_factory, mu, seed, repeats):
    rows = []
    for cell in cells:
        reason = _feasible(cell, data)
        if reason is not None:
            log.warning("skipping cell %s: %s", cell, reason)
            continue
        threads, rounds, batch = cell
        plan = ParallelPlan(threads=threads, rounds=rounds, batch_size=batch,
                            seed=seed, mu=mu)
        best = float("inf")
        pearson = float("nan")
        for _ in range(max(1, repeats)):
            trained, reports = train_parallel(model_factory(), data, val_data, plan)
            best = min(best, sum(r.time_s for r in reports))
            pearson = reports[-1].pearson_pct
        rows.append(ScalingRow(threads, rounds, batch, pearson, best, float("nan")))
    return rows


def _fill_ratio(rows: list[ScalingRow]) -> list[ScalingRow]:
    base = next((r for r in rows if r.threads == 1), None)
    if base is None:
        raise ValueError("grid must include a 1-thread cell as the baseline")
    for r in rows:
        r.ratio = base.time_s / r.time_s
    return rows


def measure_strong_scaling(data: Dataset, val_data: Dataset, model_factory,
                           cells, mu: float = 0.5, seed: int = 0,
                           repeats: int = 1) -> list[ScalingRow]:
    """Fixed total work split across threads; ratio column is speedup.

    ``cells`` are (threads, rounds, batch_size) triples and must all
    process the same number of records; cells that cannot run on the
    given dataset are skipped with a logged reason.  ``model_factory``
    builds the (identical) starting model for every cell.
    """
    cells = list(cells)
    totals = {t * r * b for t, r, b in cells}
    if len(totals) > 1:
        raise ValueError(
            f"strong scaling requires equal total work per cell, got {sorted(totals)}"
        )
    rows = _run_cells(cells, data, val_data, model_factory, mu, seed, repeats)
    return _fill_ratio(rows)


def measure_weak_scaling(data: Dataset, val_data: Dataset, model_factory,
                         thread_counts, rounds: int, batch_size: int,
                         mu: float = 0.5, seed: int = 0,
                         repeats: int = 1) -> list[ScalingRow]:
    """Per-thread work fixed, total work grows with the thread count.

    The ratio column is the efficiency t(1)/t(n); close to 1 means the
    added threads were absorbed without stretching the wall time.
    """
    cells = [(t, rounds, batch_size) for t in thread_counts]
    rows = _run_cells(cells, data, val_data, model_factory, mu, seed, repeats)
    return _fill_ratio(rows)


def write_scaling_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(SCALING_CSV_HEADER + "\n")
        writer = csv.writer(fh)
        for r in rows:
            writer.writerow([r.threads, r.rounds, r.batch_size,
                             "%.17g" % r.pearson_pct, "%.6f" % r.time_s,
                             "%.17g" % r.ratio])


def read_scaling_csv(path) -> list[ScalingRow]:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != SCALING_CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return [ScalingRow(int(t), int(r), int(b), float(p), float(s), float(e))
                for t, r, b, p, s, e in csv.reader(fh)]


def thread_compute_scaling(threads: int = 2, work: int = 50_000_000) -> float:
    """Measured speedup of pure arithmetic on ``threads`` OS threads.

    Upper bound on what any training configuration can achieve on this
    machine; shared or throttled hosts commonly stay well below the
    thread count.
    """
    _kernels.spin(1000)
    t0 = time.perf_counter()
    _kernels.spin(work)
    single = time.perf_counter() - t0
    with ThreadPoolExecutor(max_workers=threads) as ex:
        t0 = time.perf_counter()
        list(ex.map(_kernels.spin, [work] * threads))
        multi = time.perf_counter() - t0
    return threads * single / multi
