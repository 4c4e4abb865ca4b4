"""Streaming engine: accumulator and moving-window histograms folded by a
double-buffered two-stage software pipeline.

Each iteration runs five stages:

    cpu_pre      pattern recompute + kernel selection (plus any synthetic
                 pre-compute delay from a stage profile)
    transfer_in  staging the iteration's batch (plus synthetic bus delay)
    compute      the histogram kernel over the batch
    transfer_out synthetic result-bus delay
    cpu_post     accumulator/window updates, degeneracy and divergence

The pipelined runner overlaps iterations two deep: a producer thread stages
batch i+1 (cpu_pre delay + transfer_in) while the caller's thread computes
iteration i. Two staging buffers alternate, and the buffer freed by
iteration i is the one iteration i+2 must wait for. The per-iteration
barrier is the consumer's serial loop: iteration i's cpu_post always
completes before iteration i+1's compute starts, and both the pattern and
the kernel choice for iteration i+1 are taken from the moving window as of
iteration i.

Synthetic delays model off-CPU device work, so they sleep rather than spin.
Stage boundaries are integer-nanosecond timestamps shared between adjacent
stages, so summed stage durations telescope exactly to the wall time
whenever nothing overlaps (the sequential runner, or a pipelined run with
one iteration).
"""
from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .core import BINS, Histogram256, PackedChunk, merge, zero_histogram
from .kernels import (
    KernelKind,
    WorkerGroupConfig,
    _adaptive_worker,
    _naive_worker,
    group_ranges,
    reduce_subbins,
)
from .pattern import BinningPattern, compute_binning_pattern, validate_pattern
from .policy import SwitchPolicy, degeneracy, divergence, select_kernel

RESULT_BYTES = BINS * 8  # one histogram on the synthetic return bus


class NegativeCount(ArithmeticError):
    """Evicting a window entry would drive a count negative; the incremental
    window sum is corrupt (impossible unless state was mutated externally)."""


class SourceExhausted(RuntimeError):
    """The chunk source ended before num_iterations batches were drawn."""


class AccumulatorState:
    """Running sum over every histogram pushed so far."""

    def __init__(self):
        self.running = zero_histogram()
        self.chunks_seen = 0

    def push(self, h: Histogram256) -> "AccumulatorState":
        self.running = merge(self.running, h)
        self.chunks_seen += 1
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, AccumulatorState):
            return NotImplemented
        return self.chunks_seen == other.chunks_seen and self.running == other.running


class WindowState:
    """Ring of the last W per-chunk histograms plus their incrementally
    maintained sum."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be at least 1")
        self.capacity = capacity
        self.ring: deque[Histogram256] = deque()
        self.windowed = zero_histogram()

    def push(self, h: Histogram256) -> "WindowState":
        self.ring.append(h)
        self.windowed = merge(self.windowed, h)
        if len(self.ring) > self.capacity:
            evicted = self.ring.popleft()
            if np.any(self.windowed.counts < evicted.counts):
                raise NegativeCount("window sum fell behind its ring contents")
            self.windowed = Histogram256(self.windowed.counts - evicted.counts)
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, WindowState):
            return NotImplemented
        return (
            self.capacity == other.capacity
            and self.windowed == other.windowed
            and list(self.ring) == list(other.ring)
        )


def accumulator_push(state: AccumulatorState, h: Histogram256) -> AccumulatorState:
    return state.push(h)


def window_push(state: WindowState, h: Histogram256) -> WindowState:
    return state.push(h)


@dataclass(frozen=True)
class StageProfile:
    """Synthetic per-iteration stage durations in microseconds."""

    cpu_pre_us: float = 0.0
    transfer_in_us: float = 0.0
    compute_us: float = 0.0
    transfer_out_us: float = 0.0
    cpu_post_us: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    num_iterations: int
    chunk_pixels: int = 1 << 20
    batch_size: int = 1
    recompute_pattern_every: int = 1
    window_size: int = 128
    simulated_bandwidth_in: float = 0.0   # bytes per second; 0 disables
    simulated_bandwidth_out: float = 0.0
    total_slots: int = 960
    cap: int = 8
    worker: WorkerGroupConfig = field(default_factory=WorkerGroupConfig)
    stage_profile: StageProfile | None = None

    def __post_init__(self):
        if self.num_iterations < 1:
            raise ValueError("num_iterations must be at least 1")
        if self.chunk_pixels < 4 or self.chunk_pixels % 4:
            raise ValueError("chunk_pixels must be a positive multiple of 4")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.recompute_pattern_every < 1:
            raise ValueError("recompute_pattern_every must be at least 1")
        if self.window_size < 1:
            raise ValueError("window_size must be at least 1")


@dataclass(frozen=True)
class StageTiming:
    """Stage durations of one iteration, in integer nanoseconds."""

    iteration: int
    kernel: KernelKind
    cpu_pre_ns: int
    transfer_in_ns: int
    compute_ns: int
    transfer_out_ns: int
    cpu_post_ns: int

    @property
    def total_ns(self) -> int:
        return (
            self.cpu_pre_ns + self.transfer_in_ns + self.compute_ns
            + self.transfer_out_ns + self.cpu_post_ns
        )

    @property
    def cpu_pre_us(self) -> float:
        return self.cpu_pre_ns / 1e3

    @property
    def transfer_in_us(self) -> float:
        return self.transfer_in_ns / 1e3

    @property
    def compute_us(self) -> float:
        return self.compute_ns / 1e3

    @property
    def transfer_out_us(self) -> float:
        return self.transfer_out_ns / 1e3

    @property
    def cpu_post_us(self) -> float:
        return self.cpu_post_ns / 1e3


CSV_HEADER = "iteration,cpu_pre_us,transfer_in_us,compute_us,transfer_out_us,cpu_post_us,kernel_kind"
CSV_HEADER_EXTENDED = CSV_HEADER + ",degeneracy,divergence"


@dataclass
class PipelineReport:
    stages: list[StageTiming]
    kernel_log: list[KernelKind]
    degeneracy_log: list[float]
    divergence_log: list[float]
    per_slice_histograms: list[list[Histogram256]]
    total_sequential_ns: int
    total_pipelined_ns: int

    @property
    def total_sequential_us(self) -> float:
        return self.total_sequential_ns / 1e3

    @property
    def total_pipelined_us(self) -> float:
        return self.total_pipelined_ns / 1e3

    @property
    def pipelined_ratio(self) -> float:
        if self.total_sequential_ns == 0:
            return 0.0
        return self.total_pipelined_ns / self.total_sequential_ns

    @property
    def pipelined_pct(self) -> float:
        return 100.0 * self.pipelined_ratio

    def stage_totals_ns(self) -> dict[str, int]:
        names = ("cpu_pre_ns", "transfer_in_ns", "compute_ns", "transfer_out_ns", "cpu_post_ns")
        return {n: sum(getattr(s, n) for s in self.stages) for n in names}

    def to_csv(self, out: TextIO, extended: bool = False) -> None:
        out.write((CSV_HEADER_EXTENDED if extended else CSV_HEADER) + "\n")
        for i, s in enumerate(self.stages):
            row = (
                f"{s.iteration},{s.cpu_pre_us:.3f},{s.transfer_in_us:.3f},"
                f"{s.compute_us:.3f},{s.transfer_out_us:.3f},{s.cpu_post_us:.3f},"
                f"{s.kernel.value}"
            )
            if extended:
                row += f",{self.degeneracy_log[i]:.6f},{self.divergence_log[i]:.6f}"
            out.write(row + "\n")
        summary = (
            f"summary,{self.total_sequential_us:.3f},{self.total_pipelined_us:.3f},"
            f"{self.pipelined_pct:.2f},,,"
        )
        if extended:
            summary += ",,"
        out.write(summary + "\n")


def _sleep_us(duration_us: float) -> None:
    # models off-CPU device time; a plain sleep keeps the core free for the
    # other pipeline thread
    if duration_us > 0:
        time.sleep(duration_us / 1e6)


def batch_histograms(
    slices: Sequence[PackedChunk],
    kernel: KernelKind,
    pattern: BinningPattern | None,
    cfg: WorkerGroupConfig,
) -> list[Histogram256]:
    """One kernel invocation over a whole batch: every group thread is
    spawned once and walks its word range of each slice in turn."""
    if not slices:
        raise ValueError("batch needs at least one slice")
    if kernel is KernelKind.ADAPTIVE:
        if pattern is None:
            raise ValueError("adaptive kernel needs a binning pattern")
        validate_pattern(pattern)
        arrays = [
            [np.zeros(pattern.total_slots, np.uint64) for _ in slices]
            for _ in range(cfg.group_count)
        ]
    elif kernel is KernelKind.NAIVE:
        arrays = [
            [np.zeros(BINS, np.uint64) for _ in slices]
            for _ in range(cfg.group_count)
        ]
    else:
        raise ValueError(f"{kernel} is not a production kernel")

    def group_task(g: int) -> None:
        for j, chunk in enumerate(slices):
            start, stop = group_ranges(len(chunk.words), cfg.group_count)[g]
            if kernel is KernelKind.ADAPTIVE:
                _adaptive_worker(
                    chunk.words, start, stop, cfg.group_size,
                    pattern.offset, pattern.count, arrays[g][j],
                )
            else:
                _naive_worker(chunk.words, start, stop, cfg.group_size, arrays[g][j])

    threads = [
        threading.Thread(target=group_task, args=(g,), daemon=True)
        for g in range(cfg.group_count)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    results = []
    for j in range(len(slices)):
        if kernel is KernelKind.ADAPTIVE:
            partials = (reduce_subbins(arrays[g][j], pattern) for g in range(cfg.group_count))
        else:
            partials = (Histogram256(arrays[g][j]) for g in range(cfg.group_count))
        total = zero_histogram()
        for p in partials:
            total = merge(total, p)
        results.append(total)
    return results


# ---------------------------------------------------------------------------
# pipeline internals
# ---------------------------------------------------------------------------


class _StageBuffer:
    """One staging slot of the double buffer, with optional event recording."""

    def __init__(self, index: int, recorder: list | None):
        self.index = index
        self._cv = threading.Condition()
        self._state = "free"
        self._iteration = -1
        self.batch: list[PackedChunk] | None = None
        self.error: BaseException | None = None
        self.pre_ns = 0
        self.tin_ns = 0
        self.publish_ns = 0
        self._recorder = recorder

    def _record(self, event: str, iteration: int) -> None:
        if self._recorder is not None:
            self._recorder.append((self.index, event, iteration))

    def acquire_for_write(self, iteration: int, abort: threading.Event) -> bool:
        with self._cv:
            while self._state != "free":
                if abort.is_set():
                    return False
                self._cv.wait(0.05)
            assert self._state == "free", "staging buffer reused before release"
            self._state = "filling"
            self._iteration = iteration
            self._record("acquire_write", iteration)
            return True

    def publish(self, batch, error, pre_ns: int, tin_ns: int, publish_ns: int) -> None:
        with self._cv:
            self.batch = batch
            self.error = error
            self.pre_ns = pre_ns
            self.tin_ns = tin_ns
            self.publish_ns = publish_ns
            self._state = "ready"
            self._record("publish", self._iteration)
            self._cv.notify_all()

    def take(self, iteration: int, abort: threading.Event) -> bool:
        with self._cv:
            while not (self._state == "ready" and self._iteration == iteration):
                if abort.is_set():
                    return False
                self._cv.wait(0.05)
            self._state = "in_use"
            self._record("take", iteration)
            return True

    def release(self, iteration: int) -> None:
        with self._cv:
            assert self._state == "in_use" and self._iteration == iteration
            self.batch = None
            self.error = None
            self._state = "free"
            self._record("release", iteration)
            self._cv.notify_all()


def _batch_bytes(batch: Sequence[PackedChunk]) -> int:
    return sum(c.byte_size for c in batch)


class _StreamState:
    """Per-run mutable state: histograms, pattern, logs. Mutated only on the
    consumer side, in iteration order, so pipelined and sequential runs fold
    identically."""

    def __init__(self, cfg: PipelineConfig, policy: SwitchPolicy):
        self.cfg = cfg
        self.policy = policy
        self.acc = AccumulatorState()
        self.window = WindowState(cfg.window_size)
        self.pattern = compute_binning_pattern(zero_histogram(), cfg.total_slots, cfg.cap)
        self.kind = KernelKind.NAIVE
        self.kernel_log: list[KernelKind] = []
        self.degeneracy_log: list[float] = []
        self.divergence_log: list[float] = []
        self.per_slice: list[list[Histogram256]] = []

    def pre(self, iteration: int) -> None:
        # pattern and kernel choice refresh together on the recompute cadence,
        # always from the moving window as of the previous iteration
        if iteration % self.cfg.recompute_pattern_every == 0:
            self.pattern = compute_binning_pattern(
                self.window.windowed, self.cfg.total_slots, self.cfg.cap
            )
            self.kind = select_kernel(degeneracy(self.window.windowed), self.policy)

    def compute(self, batch: Sequence[PackedChunk]) -> list[Histogram256]:
        return batch_histograms(batch, self.kind, self.pattern, self.cfg.worker)

    def post(self, histograms: Iterable[Histogram256]) -> None:
        for h in histograms:
            self.acc.push(h)
            self.window.push(h)
        self.kernel_log.append(self.kind)
        self.degeneracy_log.append(degeneracy(self.window.windowed).max_bin_fraction)
        self.divergence_log.append(divergence(self.acc.running, self.window.windowed))


def _profile_us(profile: StageProfile | None, field_name: str) -> float:
    return getattr(profile, field_name) if profile is not None else 0.0


def _result(state: _StreamState, stages: list[StageTiming], wall_ns: int):
    report = PipelineReport(
        stages=stages,
        kernel_log=list(state.kernel_log),
        degeneracy_log=list(state.degeneracy_log),
        divergence_log=list(state.divergence_log),
        per_slice_histograms=state.per_slice,
        total_sequential_ns=sum(s.total_ns for s in stages),
        total_pipelined_ns=wall_ns,
    )
    return state.acc, state.window, report, list(state.kernel_log)


def run_sequential(
    source: Iterator[Sequence[PackedChunk]],
    cfg: PipelineConfig,
    policy: SwitchPolicy,
):
    """All five stages strictly in order, one iteration at a time. Serves as
    the timing baseline and as the correctness oracle for run_pipeline."""
    state = _StreamState(cfg, policy)
    profile = cfg.stage_profile
    stages: list[StageTiming] = []
    wall_start = time.perf_counter_ns()
    t0 = wall_start
    for i in range(cfg.num_iterations):
        _sleep_us(_profile_us(profile, "cpu_pre_us"))
        state.pre(i)
        t1 = time.perf_counter_ns()

        try:
            batch = list(next(source))
        except StopIteration:
            raise SourceExhausted(
                f"source ended at iteration {i} of {cfg.num_iterations}"
            ) from None
        if cfg.simulated_bandwidth_in > 0:
            _sleep_us(_batch_bytes(batch) / cfg.simulated_bandwidth_in * 1e6)
        _sleep_us(_profile_us(profile, "transfer_in_us"))
        t2 = time.perf_counter_ns()

        histograms = state.compute(batch)
        state.per_slice.append(histograms)
        _sleep_us(_profile_us(profile, "compute_us"))
        t3 = time.perf_counter_ns()

        if cfg.simulated_bandwidth_out > 0:
            _sleep_us(len(batch) * RESULT_BYTES / cfg.simulated_bandwidth_out * 1e6)
        _sleep_us(_profile_us(profile, "transfer_out_us"))
        t4 = time.perf_counter_ns()

        state.post(histograms)
        _sleep_us(_profile_us(profile, "cpu_post_us"))
        t5 = time.perf_counter_ns()

        stages.append(StageTiming(
            iteration=i,
            kernel=state.kind,
            cpu_pre_ns=t1 - t0,
            transfer_in_ns=t2 - t1,
            compute_ns=t3 - t2,
            transfer_out_ns=t4 - t3,
            cpu_post_ns=t5 - t4,
        ))
        # next iteration's cpu_pre region opens here so the stage regions
        # tile the run exactly: wall == sum of stage durations
        t0 = t5
    wall_ns = t0 - wall_start
    return _result(state, stages, wall_ns)


def run_pipeline(
    source: Iterator[Sequence[PackedChunk]],
    cfg: PipelineConfig,
    policy: SwitchPolicy,
    instrument: list | None = None,
):
    """Double-buffered overlapped run. The final accumulator, window,
    per-slice histograms and kernel log are bit-identical to run_sequential
    on the same source because all state folding happens on the consumer
    side in iteration order."""
    state = _StreamState(cfg, policy)
    profile = cfg.stage_profile
    buffers = [_StageBuffer(0, instrument), _StageBuffer(1, instrument)]
    abort = threading.Event()
    first_pre_start = [0]

    def producer() -> None:
        for i in range(cfg.num_iterations):
            buf = buffers[i % 2]
            if not buf.acquire_for_write(i, abort):
                return
            t0 = time.perf_counter_ns()
            if i == 0:
                first_pre_start[0] = t0
            _sleep_us(_profile_us(profile, "cpu_pre_us"))
            t1 = time.perf_counter_ns()
            batch = None
            error: BaseException | None = None
            try:
                batch = list(next(source))
            except StopIteration:
                error = SourceExhausted(
                    f"source ended at iteration {i} of {cfg.num_iterations}"
                )
            except BaseException as exc:  # hand the failure to the consumer
                error = exc
            if error is None:
                if cfg.simulated_bandwidth_in > 0:
                    _sleep_us(_batch_bytes(batch) / cfg.simulated_bandwidth_in * 1e6)
                _sleep_us(_profile_us(profile, "transfer_in_us"))
            t2 = time.perf_counter_ns()
            buf.publish(batch, error, t1 - t0, t2 - t1, t2)
            if error is not None:
                return

    feeder = threading.Thread(target=producer, daemon=True)
    stages: list[StageTiming] = []
    last_post = 0
    feeder.start()
    try:
        for i in range(cfg.num_iterations):
            buf = buffers[i % 2]
            request_ns = time.perf_counter_ns()
            buf.take(i, abort)
            take_ns = time.perf_counter_ns()
            if buf.error is not None:
                raise buf.error
            batch = buf.batch
            pre_ns = buf.pre_ns
            # time this thread actually sat out waiting for the staging to
            # finish is transfer completion, so it counts toward transfer_in;
            # a batch staged long ago adds nothing
            tin_ns = buf.tin_ns + max(0, take_ns - max(request_ns, buf.publish_ns))

            state.pre(i)
            t_pre_done = time.perf_counter_ns()

            histograms = state.compute(batch)
            state.per_slice.append(histograms)
            _sleep_us(_profile_us(profile, "compute_us"))
            t_comp = time.perf_counter_ns()

            if cfg.simulated_bandwidth_out > 0:
                _sleep_us(len(batch) * RESULT_BYTES / cfg.simulated_bandwidth_out * 1e6)
            _sleep_us(_profile_us(profile, "transfer_out_us"))
            t_tout = time.perf_counter_ns()

            state.post(histograms)
            _sleep_us(_profile_us(profile, "cpu_post_us"))
            t_post = time.perf_counter_ns()

            buf.release(i)
            stages.append(StageTiming(
                iteration=i,
                kernel=state.kind,
                cpu_pre_ns=pre_ns + (t_pre_done - take_ns),
                transfer_in_ns=tin_ns,
                compute_ns=t_comp - t_pre_done,
                transfer_out_ns=t_tout - t_comp,
                cpu_post_ns=t_post - t_tout,
            ))
            last_post = t_post
    finally:
        abort.set()
        feeder.join()

    wall_ns = last_post - first_pre_start[0]
    return _result(state, stages, wall_ns)
