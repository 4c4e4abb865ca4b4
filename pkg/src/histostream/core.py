"""Packed pixel chunks and the 256-bin histogram value type.

Pixels are 8-bit intensities stored four per 32-bit word, least significant
byte first (byte k of word i holds pixel 4*i + k). Histogram counts are
64-bit so that long accumulator runs cannot overflow even though kernels
may use narrower sub-counters internally.

Both types are immutable values once constructed: their backing arrays are
marked read-only, so they can be shared between concurrent workers freely.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

BINS = 256
PIXELS_PER_WORD = 4


class LengthNotMultipleOfFour(ValueError):
    """Pixel sequences must fill 32-bit words exactly (4 pixels per word)."""


class PixelValueOutOfRange(ValueError):
    """Pixel values live in 0..=255."""


class CountOverflow(OverflowError):
    """A histogram count left the unsigned 64-bit range."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class PackedChunk:
    """A pixel stream packed four bytes per 32-bit word."""

    __slots__ = ("words",)

    def __init__(self, words: np.ndarray):
        w = np.ascontiguousarray(words, dtype=np.uint32)
        object.__setattr__(self, "words", _readonly(w))

    def __setattr__(self, name, value):
        raise AttributeError("PackedChunk is immutable")

    @property
    def pixel_count(self) -> int:
        return PIXELS_PER_WORD * len(self.words)

    @property
    def byte_size(self) -> int:
        return self.pixel_count

    def __len__(self) -> int:
        return self.pixel_count

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedChunk):
            return NotImplemented
        return np.array_equal(self.words, other.words)

    def __repr__(self) -> str:
        return f"PackedChunk(pixels={self.pixel_count})"


class Histogram256:
    """256 unsigned 64-bit occurrence counts, one per pixel value."""

    __slots__ = ("counts",)

    def __init__(self, counts: np.ndarray):
        c = np.ascontiguousarray(counts, dtype=np.uint64)
        if c.shape != (BINS,):
            raise ValueError(f"histogram needs exactly {BINS} counts, got shape {c.shape}")
        object.__setattr__(self, "counts", _readonly(c))

    def __setattr__(self, name, value):
        raise AttributeError("Histogram256 is immutable")

    def total(self) -> int:
        return int(self.counts.sum(dtype=np.uint64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Histogram256):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        nz = int(np.count_nonzero(self.counts))
        return f"Histogram256(total={self.total()}, nonzero_bins={nz})"


def zero_histogram() -> Histogram256:
    return Histogram256(np.zeros(BINS, dtype=np.uint64))


def pack_pixels(pixels: Sequence[int] | np.ndarray) -> PackedChunk:
    """Pack a pixel sequence into words, least significant byte first.

    Rejects lengths that are not a multiple of 4: there is no spare
    sentinel value in 0..255, so callers must pad or truncate explicitly.
    """
    p = np.asarray(pixels)
    if p.ndim != 1:
        raise PixelValueOutOfRange("pixels must be a flat sequence")
    if len(p) % PIXELS_PER_WORD != 0:
        raise LengthNotMultipleOfFour(
            f"pixel count {len(p)} is not a multiple of {PIXELS_PER_WORD}"
        )
    if p.dtype != np.uint8:
        if len(p) and (p.min() < 0 or p.max() > 255):
            raise PixelValueOutOfRange("pixel values must be in 0..=255")
        p = p.astype(np.uint8)
    if len(p) == 0:
        return PackedChunk(np.empty(0, dtype=np.uint32))
    w = p.astype(np.uint32)
    words = w[0::4] | (w[1::4] << 8) | (w[2::4] << 16) | (w[3::4] << 24)
    return PackedChunk(words)


def unpack_word(word: int) -> tuple[int, int, int, int]:
    """The four pixels of one packed word, earliest pixel first."""
    w = int(word)
    return (w & 0xFF, (w >> 8) & 0xFF, (w >> 16) & 0xFF, (w >> 24) & 0xFF)


def unpack_chunk(chunk: PackedChunk) -> np.ndarray:
    """All pixels of a chunk as a uint8 array, in stream order."""
    w = chunk.words
    out = np.empty(chunk.pixel_count, dtype=np.uint8)
    out[0::4] = w & 0xFF
    out[1::4] = (w >> 8) & 0xFF
    out[2::4] = (w >> 16) & 0xFF
    out[3::4] = (w >> 24) & 0xFF
    return out


def merge(a: Histogram256, b: Histogram256) -> Histogram256:
    """Componentwise sum; commutative and associative with the zero histogram
    as identity. Overflow past 64 bits is practically unreachable but still
    detected via the wraparound."""
    s = a.counts + b.counts
    if np.any(s < a.counts):
        raise CountOverflow("histogram bin count exceeded 64-bit range")
    return Histogram256(s)


def merge_all(histograms: Iterable[Histogram256]) -> Histogram256:
    out = zero_histogram()
    for h in histograms:
        out = merge(out, h)
    return out
