"""Small timing helpers shared by the CLI modes and the acceptance suite.

Desk-scale CPU timing is noisy, so every reported number is the median of
a fixed repetition count and pairwise orderings carry a noise guard: two
medians are only called ordered when they differ by more than the guard
fraction, otherwise the comparison is inconclusive.
"""
from __future__ import annotations

import enum
import random
import time
from typing import Callable

NOISE_GUARD = 0.10
# below this median duration a measurement is thread-spawn and timer noise,
# so orderings are reported but never enforced
NOISE_FLOOR_S = 0.005


class Verdict(enum.Enum):
    CONFIRMED = "confirmed"
    INCONCLUSIVE = "inconclusive"
    INVERTED = "inverted"


def median(values: list[float]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def median_duration_s(fn: Callable[[], object], repetitions: int) -> float:
    """Median wall time of ``repetitions`` calls, after one untimed warm call
    (touches pages, fills caches, absorbs any lazy compilation)."""
    fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return median(samples)


def interleaved_samples(
    fns: dict[str, Callable[[], object]],
    repetitions: int,
    shuffle_seed: int | None = None,
) -> dict[str, list[float]]:
    """Wall-time samples with the candidates interleaved per repetition, so
    host-speed drift lands on every candidate equally instead of skewing
    whichever happened to run in a slow stretch. A shuffle seed additionally
    randomizes the within-repetition order to break any aliasing against
    periodic background load."""
    for fn in fns.values():
        fn()
    samples: dict[str, list[float]] = {name: [] for name in fns}
    rng = random.Random(shuffle_seed) if shuffle_seed is not None else None
    names = list(fns)
    for _ in range(repetitions):
        if rng is not None:
            rng.shuffle(names)
        for name in names:
            t0 = time.perf_counter()
            fns[name]()
            samples[name].append(time.perf_counter() - t0)
    return samples


def interleaved_median_durations(
    fns: dict[str, Callable[[], object]],
    repetitions: int,
    shuffle_seed: int | None = None,
) -> dict[str, float]:
    samples = interleaved_samples(fns, repetitions, shuffle_seed)
    return {name: median(vals) for name, vals in samples.items()}


def relative_spread(samples: list[float]) -> float:
    """Interquartile range over the median: how trustworthy one median is."""
    ordered = sorted(samples)
    n = len(ordered)
    if n < 2:
        return 0.0
    q1 = ordered[max(0, (n - 1) // 4)]
    q3 = ordered[min(n - 1, (3 * (n - 1) + 3) // 4)]
    mid = median(samples)
    return (q3 - q1) / mid if mid > 0 else 0.0


def ordering(expected_faster: float, expected_slower: float,
             guard: float = NOISE_GUARD) -> Verdict:
    """Check whether the throughput expected to be higher actually is,
    with the noise guard applied symmetrically."""
    if expected_faster > expected_slower * (1.0 + guard):
        return Verdict.CONFIRMED
    if expected_slower > expected_faster * (1.0 + guard):
        return Verdict.INVERTED
    return Verdict.INCONCLUSIVE
