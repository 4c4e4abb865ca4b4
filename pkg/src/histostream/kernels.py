"""Histogram kernels: serial reference, contended naive, and sub-binned adaptive.

Execution model
---------------
A kernel invocation runs ``group_count`` worker groups, one OS thread per
group, over contiguous word ranges of the chunk (remainder words go to the
last group). Inside a group, ``group_size`` lanes execute in lockstep: per
step each lane takes one word (lane L takes word ``base + L``), and the four
packed pixels are handled in four sub-steps.

Every counter update goes through a software fetch-and-add: all lanes that
still need to commit write their lane index into a tag slot for their target
counter, read it back, and the surviving lane commits its increment while the
rest retry. The retry rounds serialize same-counter updates, so the executed
work per sub-step grows with the number of lanes that collide on one counter.
That serialization is exactly what the sub-binned kernel relieves: a lane with
index L updating bin b targets slot ``offset[b] + (L mod count[b])``, spreading
a hot bin's increments over up to ``cap`` sub-counters.

The arbitration commits lanes in a deterministic order, so counter values,
per-slot totals, and executed work are all pure functions of the input data,
independent of how the group threads get scheduled.
"""
from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import BINS, Histogram256, PackedChunk, merge_all, unpack_chunk
from .pattern import BinningPattern, validate_pattern


class SubCounterOverflow(OverflowError):
    """A narrow (16-bit) sub-counter wrapped during a kernel run."""


class KernelKind(enum.Enum):
    """Histogram strategies plus the timing-only ablation stages."""

    NAIVE = "naive"
    ADAPTIVE = "adaptive"
    # ablation stages; only FULL produces a meaningful histogram
    COPY_ONLY = "copy_only"
    COPY_INIT = "copy_init"
    PATTERN_LOAD = "pattern_load"
    SUBHIST_NOREDUCE = "subhist_noreduce"
    FULL = "full"


ABLATION_STAGES = (
    KernelKind.COPY_ONLY,
    KernelKind.COPY_INIT,
    KernelKind.PATTERN_LOAD,
    KernelKind.SUBHIST_NOREDUCE,
    KernelKind.FULL,
)


@dataclass(frozen=True)
class WorkerGroupConfig:
    """Shape of the worker pool: lanes per group and number of groups."""

    group_size: int = 32
    group_count: int = 4

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be at least 1")
        if self.group_count < 1:
            raise ValueError("group_count must be at least 1")


@dataclass(frozen=True)
class AblationTiming:
    """Wall time of one ablation stage run plus derived throughput."""

    variant: KernelKind
    duration_s: float
    throughput_bps: float
    checksum: int
    histogram: Histogram256 | None = None


# ---------------------------------------------------------------------------
# compiled group workers
#
# All workers share the same skeleton so that each ablation stage does a
# strict superset of the previous stage's work.
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _naive_worker(words, start, stop, group_size, counters):
    tags = np.full(BINS, -1, np.int64)
    slots = np.empty(group_size, np.int64)
    pend = np.empty(group_size, np.int64)
    nxt = np.empty(group_size, np.int64)
    lane_words = np.empty(group_size, np.uint32)
    base = start
    while base < stop:
        active = min(group_size, stop - base)
        for lane in range(active):
            lane_words[lane] = words[base + lane]
        for k in range(4):
            shift = 8 * k
            for lane in range(active):
                slots[lane] = (lane_words[lane] >> shift) & 0xFF
                pend[lane] = lane
            npend = active
            while npend > 0:
                for i in range(npend):
                    tags[slots[pend[i]]] = pend[i]
                nnext = 0
                for i in range(npend):
                    lane = pend[i]
                    s = slots[lane]
                    if tags[s] == lane:
                        counters[s] += 1
                    else:
                        nxt[nnext] = lane
                        nnext += 1
                for i in range(nnext):
                    pend[i] = nxt[i]
                npend = nnext
        base += group_size


@njit(cache=True, nogil=True)
def _adaptive_worker(words, start, stop, group_size, offset, count, slot_counts):
    total_slots = slot_counts.shape[0]
    tags = np.full(total_slots, -1, np.int64)
    slots = np.empty(group_size, np.int64)
    pend = np.empty(group_size, np.int64)
    nxt = np.empty(group_size, np.int64)
    lane_words = np.empty(group_size, np.uint32)
    base = start
    while base < stop:
        active = min(group_size, stop - base)
        for lane in range(active):
            lane_words[lane] = words[base + lane]
        for k in range(4):
            shift = 8 * k
            for lane in range(active):
                b = (lane_words[lane] >> shift) & 0xFF
                slots[lane] = offset[b] + lane % count[b]
                pend[lane] = lane
            npend = active
            while npend > 0:
                for i in range(npend):
                    tags[slots[pend[i]]] = pend[i]
                nnext = 0
                for i in range(npend):
                    lane = pend[i]
                    s = slots[lane]
                    if tags[s] == lane:
                        slot_counts[s] += 1
                    else:
                        nxt[nnext] = lane
                        nnext += 1
                for i in range(nnext):
                    pend[i] = nxt[i]
                npend = nnext
        base += group_size


@njit(cache=True, nogil=True)
def _adaptive_worker_traced(words, start, stop, group_size, offset, count,
                            slot_counts, lane_touch):
    """Same as _adaptive_worker but also counts increments per (lane, slot)."""
    total_slots = slot_counts.shape[0]
    tags = np.full(total_slots, -1, np.int64)
    slots = np.empty(group_size, np.int64)
    pend = np.empty(group_size, np.int64)
    nxt = np.empty(group_size, np.int64)
    lane_words = np.empty(group_size, np.uint32)
    base = start
    while base < stop:
        active = min(group_size, stop - base)
        for lane in range(active):
            lane_words[lane] = words[base + lane]
        for k in range(4):
            shift = 8 * k
            for lane in range(active):
                b = (lane_words[lane] >> shift) & 0xFF
                slots[lane] = offset[b] + lane % count[b]
                pend[lane] = lane
            npend = active
            while npend > 0:
                for i in range(npend):
                    tags[slots[pend[i]]] = pend[i]
                nnext = 0
                for i in range(npend):
                    lane = pend[i]
                    s = slots[lane]
                    if tags[s] == lane:
                        slot_counts[s] += 1
                        lane_touch[lane, s] += 1
                    else:
                        nxt[nnext] = lane
                        nnext += 1
                for i in range(nnext):
                    pend[i] = nxt[i]
                npend = nnext
        base += group_size


@njit(cache=True, nogil=True)
def _stage_copy_worker(words, start, stop, group_size, sink):
    """Read every word, write a checksum: the transfer-only baseline."""
    lane_sink = np.zeros(group_size, np.uint64)
    base = start
    while base < stop:
        active = min(group_size, stop - base)
        for lane in range(active):
            lane_sink[lane] ^= np.uint64(words[base + lane])
        base += group_size
    acc = np.uint64(0)
    for lane in range(group_size):
        acc ^= lane_sink[lane]
    sink[0] = acc


@njit(cache=True, nogil=True)
def _stage_copy_init_worker(words, start, stop, group_size, total_slots, sink):
    slot_counts = np.zeros(total_slots, np.uint64)
    lane_sink = np.zeros(group_size, np.uint64)
    base = start
    while base < stop:
        active = min(group_size, stop - base)
        for lane in range(active):
            lane_sink[lane] ^= np.uint64(words[base + lane])
        base += group_size
    acc = np.uint64(0)
    for lane in range(group_size):
        acc ^= lane_sink[lane]
    sink[0] = acc + slot_counts[0]


@njit(cache=True, nogil=True)
def _stage_pattern_load_worker(words, start, stop, group_size, offset, count,
                               total_slots, sink):
    slot_counts = np.zeros(total_slots, np.uint64)
    lane_sink = np.zeros(group_size, np.uint64)
    lane_words = np.empty(group_size, np.uint32)
    base = start
    while base < stop:
        active = min(group_size, stop - base)
        for lane in range(active):
            lane_words[lane] = words[base + lane]
        for k in range(4):
            shift = 8 * k
            for lane in range(active):
                b = (lane_words[lane] >> shift) & 0xFF
                lane_sink[lane] ^= np.uint64(offset[b] + count[b])
        base += group_size
    acc = np.uint64(0)
    for lane in range(group_size):
        acc ^= lane_sink[lane]
    sink[0] = acc + slot_counts[0]


@njit(cache=True, nogil=True)
def _adaptive_worker_u16(words, start, stop, group_size, offset, count, slot_counts):
    """Narrow test mode: 16-bit sub-counters that may wrap."""
    total_slots = slot_counts.shape[0]
    tags = np.full(total_slots, -1, np.int64)
    slots = np.empty(group_size, np.int64)
    pend = np.empty(group_size, np.int64)
    nxt = np.empty(group_size, np.int64)
    lane_words = np.empty(group_size, np.uint32)
    base = start
    while base < stop:
        active = min(group_size, stop - base)
        for lane in range(active):
            lane_words[lane] = words[base + lane]
        for k in range(4):
            shift = 8 * k
            for lane in range(active):
                b = (lane_words[lane] >> shift) & 0xFF
                slots[lane] = offset[b] + lane % count[b]
                pend[lane] = lane
            npend = active
            while npend > 0:
                for i in range(npend):
                    tags[slots[pend[i]]] = pend[i]
                nnext = 0
                for i in range(npend):
                    lane = pend[i]
                    s = slots[lane]
                    if tags[s] == lane:
                        slot_counts[s] += np.uint16(1)
                    else:
                        nxt[nnext] = lane
                        nnext += 1
                for i in range(nnext):
                    pend[i] = nxt[i]
                npend = nnext
        base += group_size


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def group_ranges(word_count: int, group_count: int) -> list[tuple[int, int]]:
    """Contiguous equal word ranges; remainder words go to the last group."""
    base = word_count // group_count
    ranges = [(g * base, (g + 1) * base) for g in range(group_count - 1)]
    ranges.append(((group_count - 1) * base, word_count))
    return ranges


def _run_group_threads(target, per_group_args) -> None:
    threads = [
        threading.Thread(target=target, args=args, daemon=True)
        for args in per_group_args
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def reference_histogram(chunk: PackedChunk) -> Histogram256:
    """Single-threaded oracle: a plain serial pass over all pixels."""
    counts = np.bincount(unpack_chunk(chunk), minlength=BINS)
    return Histogram256(counts.astype(np.uint64))


def naive_histogram(chunk: PackedChunk, cfg: WorkerGroupConfig) -> Histogram256:
    """One shared 256-counter array per group; every increment is a
    fetch-and-add on the bin's single counter, so skewed data serializes."""
    words = chunk.words
    ranges = group_ranges(len(words), cfg.group_count)
    partials = [np.zeros(BINS, np.uint64) for _ in ranges]
    _run_group_threads(
        _naive_worker,
        [(words, s, e, cfg.group_size, partials[g]) for g, (s, e) in enumerate(ranges)],
    )
    return merge_all(Histogram256(p) for p in partials)


def adaptive_histogram(
    chunk: PackedChunk,
    pattern: BinningPattern,
    cfg: WorkerGroupConfig,
    *,
    narrow_counters: bool = False,
    return_slots: bool = False,
):
    """Sub-binned kernel: lane L updates slot offset[b] + (L mod count[b]),
    then the per-group slot arrays are reduced back to 256 bins and merged.

    ``narrow_counters`` switches the per-group slot arrays to 16 bits to
    mirror tight on-chip memory; wraps are detected and raised.
    """
    validate_pattern(pattern)
    words = chunk.words
    ranges = group_ranges(len(words), cfg.group_count)
    dtype = np.uint16 if narrow_counters else np.uint64
    worker = _adaptive_worker_u16 if narrow_counters else _adaptive_worker
    group_slots = [np.zeros(pattern.total_slots, dtype) for _ in ranges]
    _run_group_threads(
        worker,
        [
            (words, s, e, cfg.group_size, pattern.offset, pattern.count, group_slots[g])
            for g, (s, e) in enumerate(ranges)
        ],
    )
    result = merge_all(reduce_subbins(slots, pattern) for slots in group_slots)
    if narrow_counters and result.total() != chunk.pixel_count:
        # a wrapped 16-bit slot shows up as a total deficit of k * 65536
        raise SubCounterOverflow(
            f"16-bit sub-counter wrapped: total {result.total()} != {chunk.pixel_count}"
        )
    if return_slots:
        return result, group_slots
    return result


def adaptive_lane_touches(
    chunk: PackedChunk, pattern: BinningPattern, cfg: WorkerGroupConfig
) -> tuple[Histogram256, list[np.ndarray]]:
    """Instrumented adaptive run: per-group (lane, slot) increment totals."""
    validate_pattern(pattern)
    words = chunk.words
    ranges = group_ranges(len(words), cfg.group_count)
    group_slots = [np.zeros(pattern.total_slots, np.uint64) for _ in ranges]
    touches = [
        np.zeros((cfg.group_size, pattern.total_slots), np.uint64) for _ in ranges
    ]
    _run_group_threads(
        _adaptive_worker_traced,
        [
            (words, s, e, cfg.group_size, pattern.offset, pattern.count,
             group_slots[g], touches[g])
            for g, (s, e) in enumerate(ranges)
        ],
    )
    result = merge_all(reduce_subbins(slots, pattern) for slots in group_slots)
    return result, touches


def reduce_subbins(slots: np.ndarray, pattern: BinningPattern) -> Histogram256:
    """Sum each bin's slot range back into a single count."""
    validate_pattern(pattern)
    if slots.shape != (pattern.total_slots,):
        raise ValueError(
            f"slot array length {slots.shape} does not match pattern ({pattern.total_slots},)"
        )
    sums = np.add.reduceat(slots.astype(np.uint64), pattern.offset)
    return Histogram256(sums)


def run_ablation(
    chunk: PackedChunk,
    variant: KernelKind,
    pattern: BinningPattern,
    cfg: WorkerGroupConfig,
) -> AblationTiming:
    """Execute exactly the work of one genealogy stage and time it.

    Stage work is strictly cumulative: copy, + zero the slot array, + read
    the pattern per pixel, + arbitrated sub-bin increments, + per-bin
    reduce and group merge. The checksum written by the copy stages keeps
    the measured loops from being optimized away.
    """
    if variant not in ABLATION_STAGES:
        raise ValueError(f"{variant} is not an ablation stage")
    validate_pattern(pattern)
    words = chunk.words
    ranges = group_ranges(len(words), cfg.group_count)
    sinks = [np.zeros(1, np.uint64) for _ in ranges]
    histogram = None

    t0 = time.perf_counter()
    if variant is KernelKind.COPY_ONLY:
        _run_group_threads(
            _stage_copy_worker,
            [(words, s, e, cfg.group_size, sinks[g]) for g, (s, e) in enumerate(ranges)],
        )
    elif variant is KernelKind.COPY_INIT:
        _run_group_threads(
            _stage_copy_init_worker,
            [
                (words, s, e, cfg.group_size, pattern.total_slots, sinks[g])
                for g, (s, e) in enumerate(ranges)
            ],
        )
    elif variant is KernelKind.PATTERN_LOAD:
        _run_group_threads(
            _stage_pattern_load_worker,
            [
                (words, s, e, cfg.group_size, pattern.offset, pattern.count,
                 pattern.total_slots, sinks[g])
                for g, (s, e) in enumerate(ranges)
            ],
        )
    elif variant is KernelKind.SUBHIST_NOREDUCE:
        group_slots = [np.zeros(pattern.total_slots, np.uint64) for _ in ranges]
        _run_group_threads(
            _adaptive_worker,
            [
                (words, s, e, cfg.group_size, pattern.offset, pattern.count,
                 group_slots[g])
                for g, (s, e) in enumerate(ranges)
            ],
        )
        for g, slots in enumerate(group_slots):
            sinks[g][0] = slots.sum(dtype=np.uint64)
    else:  # FULL
        group_slots = [np.zeros(pattern.total_slots, np.uint64) for _ in ranges]
        _run_group_threads(
            _adaptive_worker,
            [
                (words, s, e, cfg.group_size, pattern.offset, pattern.count,
                 group_slots[g])
                for g, (s, e) in enumerate(ranges)
            ],
        )
        histogram = merge_all(reduce_subbins(slots, pattern) for slots in group_slots)
        for g in range(len(ranges)):
            sinks[g][0] = histogram.counts[0]
    duration = time.perf_counter() - t0

    checksum = 0
    for sink in sinks:
        checksum ^= int(sink[0])
    throughput = chunk.byte_size / duration if duration > 0 else float("inf")
    return AblationTiming(variant, duration, throughput, checksum, histogram)


def compute_histogram(
    chunk: PackedChunk,
    kind: KernelKind,
    pattern: BinningPattern | None,
    cfg: WorkerGroupConfig,
) -> Histogram256:
    """Dispatch on the two production kernels."""
    if kind is KernelKind.NAIVE:
        return naive_histogram(chunk, cfg)
    if kind is KernelKind.ADAPTIVE:
        if pattern is None:
            raise ValueError("adaptive kernel needs a binning pattern")
        return adaptive_histogram(chunk, pattern, cfg)
    raise ValueError(f"{kind} is not a production kernel")


_warmed = False


def warm_kernels() -> None:
    """Compile every worker on tiny inputs so timed runs never JIT."""
    global _warmed
    if _warmed:
        return
    from .pattern import uniform_pattern

    words = np.arange(16, dtype=np.uint32)
    chunk = PackedChunk(words)
    pat = uniform_pattern(BINS + 8, 2)
    cfg = WorkerGroupConfig(group_size=4, group_count=2)
    naive_histogram(chunk, cfg)
    adaptive_histogram(chunk, pat, cfg)
    adaptive_histogram(chunk, pat, cfg, narrow_counters=True)
    adaptive_lane_touches(chunk, pat, cfg)
    for stage in ABLATION_STAGES:
        run_ablation(chunk, stage, pat, cfg)
    _warmed = True
