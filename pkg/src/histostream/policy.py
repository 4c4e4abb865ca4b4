"""Degeneracy metric, the kernel switching rule, and histogram divergence.

Degeneracy is the largest single-bin share of a histogram's total count.
The switch rule is a plain inclusive threshold on that share: at or above
it the sub-binned kernel's extra work pays off, below it the naive kernel
wins. Divergence between the long-run accumulator and the moving window
is total-variation distance, the simplest bounded comparison metric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Histogram256
from .kernels import KernelKind


class EmptyHistogram(ValueError):
    """Divergence is undefined for a histogram with zero total."""


@dataclass(frozen=True)
class DegeneracyReport:
    max_bin_fraction: float
    argmax_bin: int
    total: int


@dataclass(frozen=True)
class SwitchPolicy:
    threshold: float = 0.45

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must be strictly between 0 and 1")


def degeneracy(h: Histogram256) -> DegeneracyReport:
    """Largest bin share; ties broken by the lowest bin index. An empty
    histogram reports fraction 0."""
    total = h.total()
    if total == 0:
        return DegeneracyReport(0.0, 0, 0)
    argmax = int(np.argmax(h.counts))
    return DegeneracyReport(int(h.counts[argmax]) / total, argmax, total)


def select_kernel(report: DegeneracyReport, policy: SwitchPolicy) -> KernelKind:
    """Adaptive at or above the threshold, naive below it."""
    if report.max_bin_fraction >= policy.threshold:
        return KernelKind.ADAPTIVE
    return KernelKind.NAIVE


def divergence(a: Histogram256, b: Histogram256) -> float:
    """Total-variation distance: half the L1 distance between the two
    normalized histograms. 0 for proportional counts, 1 for disjoint support."""
    ta, tb = a.total(), b.total()
    if ta == 0 or tb == 0:
        raise EmptyHistogram("divergence needs two non-empty histograms")
    pa = a.counts.astype(np.float64) / ta
    pb = b.counts.astype(np.float64) / tb
    return 0.5 * float(np.abs(pa - pb).sum())
