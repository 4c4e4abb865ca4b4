"""Sub-bin allocation: laying 256 bins out over a flat slot array.

A binning pattern assigns each bin a contiguous run of slots inside a
shared sub-counter array of length S (960 by default). Bins that carried
more of the recent traffic get more slots, up to a fixed cap (8 by
default), so concurrent increments spread over several counters instead
of serializing on one.

Allocation is a floor-1 largest-remainder apportionment:

1. every bin gets 1 slot; R = S - 256 extras remain
2. each bin's ideal share of the extras is prior[b] / total * R
   (R / 256 for every bin when the prior is empty)
3. each bin receives floor(ideal) extras, capped at cap - 1
4. leftover extras go one at a time to non-capped bins in descending
   order of fractional remainder, ties and zero remainders broken by
   ascending bin index, cycling round-robin until none remain

The procedure is a pure function of the prior: identical priors always
produce identical patterns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BINS, Histogram256

DEFAULT_SLOTS = 960
DEFAULT_CAP = 8


class SlotCountOutOfRange(ValueError):
    """total_slots must lie in [256, 256 * cap]."""


class InvalidPattern(ValueError):
    """A pattern violated one of its structural invariants."""


@dataclass(frozen=True, eq=False)
class BinningPattern:
    """Per-bin slot offset and slot count into a flat array of total_slots."""

    offset: np.ndarray
    count: np.ndarray
    total_slots: int = DEFAULT_SLOTS
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        off = np.ascontiguousarray(self.offset, dtype=np.int64)
        cnt = np.ascontiguousarray(self.count, dtype=np.int64)
        off.setflags(write=False)
        cnt.setflags(write=False)
        object.__setattr__(self, "offset", off)
        object.__setattr__(self, "count", cnt)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinningPattern):
            return NotImplemented
        return (
            self.total_slots == other.total_slots
            and self.cap == other.cap
            and np.array_equal(self.offset, other.offset)
            and np.array_equal(self.count, other.count)
        )


def _check_slot_range(total_slots: int, cap: int) -> None:
    if cap < 1:
        raise SlotCountOutOfRange(f"cap must be at least 1, got {cap}")
    if not (BINS <= total_slots <= BINS * cap):
        raise SlotCountOutOfRange(
            f"total_slots {total_slots} outside [{BINS}, {BINS * cap}] for cap {cap}"
        )


def _offsets_from_counts(counts: np.ndarray) -> np.ndarray:
    offsets = np.zeros(BINS, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    return offsets


def uniform_pattern(total_slots: int = DEFAULT_SLOTS, cap: int = DEFAULT_CAP) -> BinningPattern:
    """Equal shares; the leftover goes to the lowest bin indices first."""
    _check_slot_range(total_slots, cap)
    base, rem = divmod(total_slots, BINS)
    counts = np.full(BINS, base, dtype=np.int64)
    counts[:rem] += 1
    return BinningPattern(_offsets_from_counts(counts), counts, total_slots, cap)


def compute_binning_pattern(
    prior: Histogram256,
    total_slots: int = DEFAULT_SLOTS,
    cap: int = DEFAULT_CAP,
) -> BinningPattern:
    """Apportion slots proportionally to a prior histogram.

    An all-zero prior (no history yet) degenerates to the uniform pattern.
    """
    _check_slot_range(total_slots, cap)
    extras = total_slots - BINS
    total = prior.total()
    if total == 0:
        ideal = np.full(BINS, extras / BINS, dtype=np.float64)
    else:
        ideal = prior.counts.astype(np.float64) * (extras / total)

    floors = np.floor(ideal)
    granted = np.minimum(floors, cap - 1).astype(np.int64)
    counts = 1 + granted
    remaining = extras - int(granted.sum())

    if remaining > 0:
        frac = ideal - floors
        order = sorted(range(BINS), key=lambda b: (-frac[b], b))
        pool = [b for b in order if counts[b] < cap]
        while remaining > 0:
            progressed = False
            for b in pool:
                if counts[b] < cap:
                    counts[b] += 1
                    remaining -= 1
                    progressed = True
                    if remaining == 0:
                        break
            if not progressed:  # unreachable while total_slots <= 256 * cap
                raise SlotCountOutOfRange("ran out of uncapped bins")
            pool = [b for b in pool if counts[b] < cap]

    return BinningPattern(_offsets_from_counts(counts), counts, total_slots, cap)


def validate_pattern(pattern: BinningPattern) -> None:
    """Raise InvalidPattern naming the first violated invariant."""
    cnt = pattern.count
    off = pattern.offset
    if cnt.shape != (BINS,) or off.shape != (BINS,):
        raise InvalidPattern("pattern arrays must have 256 entries")
    if np.any(cnt < 1):
        raise InvalidPattern("count below 1")
    if np.any(cnt > pattern.cap):
        raise InvalidPattern("count above cap")
    if int(cnt.sum()) != pattern.total_slots:
        raise InvalidPattern("slot total mismatch")
    if off[0] != 0 or not np.array_equal(off[1:], (off + cnt)[:-1]):
        raise InvalidPattern("offsets not contiguous")


def pattern_to_text(pattern: BinningPattern) -> str:
    """256 lines of "bin offset count", the debug/dump format."""
    lines = [
        f"{b} {int(pattern.offset[b])} {int(pattern.count[b])}"
        for b in range(BINS)
    ]
    return "\n".join(lines) + "\n"


def pattern_from_text(text: str, cap: int = DEFAULT_CAP) -> BinningPattern:
    offset = np.zeros(BINS, dtype=np.int64)
    count = np.zeros(BINS, dtype=np.int64)
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if len(rows) != BINS:
        raise InvalidPattern(f"expected {BINS} pattern lines, got {len(rows)}")
    for ln in rows:
        b, off, cnt = (int(tok) for tok in ln.split())
        offset[b] = off
        count[b] = cnt
    p = BinningPattern(offset, count, int(count.sum()), cap)
    validate_pattern(p)
    return p


def floor_shares(prior: Histogram256, total_slots: int = DEFAULT_SLOTS) -> np.ndarray:
    """floor(ideal_b) for each bin before capping; exposed for monotonicity
    checks of the apportionment."""
    extras = total_slots - BINS
    total = prior.total()
    if total == 0:
        return np.floor(np.full(BINS, extras / BINS))
    return np.floor(prior.counts.astype(np.float64) * (extras / total))
