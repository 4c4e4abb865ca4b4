"""Seeded input generators for every benchmarked distribution, plus raw-file
ingestion.

Portability contract
--------------------
All randomness comes from splitmix64 (public domain, Sebastiano Vigna):
the 64-bit state advances by 0x9E3779B97F4A7C15 per output and each output
is the finalized state

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

with all arithmetic modulo 2**64. Derived quantities are pinned exactly so
any implementation of this module reproduces identical bytes:

* byte streams consume each output 8 bytes at a time, least significant
  byte first
* unit doubles are (output >> 11) * 2**-53
* normal deviates are Irwin-Hall: the sum of 12 consecutive unit doubles
  minus 6 (a 12-fold uniform convolution). No transcendental functions
  enter the stream, so IEEE-754 arithmetic fixes every rounding.
* a normal pixel is floor(mean + sigma * deviate + 0.5) clamped to [0, 255]
* a mixture pixel first draws one unit double; if it is below the
  degeneracy it emits the degenerate value and consumes nothing else,
  otherwise it consumes one more output and emits its low byte. This makes
  degeneracy 1.0 byte-identical to the constant generator.

Chunk seeds for multi-chunk streams are derived as base_seed XOR chunk_index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from numba import njit

from .core import PackedChunk, pack_pixels

log = logging.getLogger(__name__)

UNIFORM = "uniform"
SEQUENTIAL = "sequential"
CONSTANT = "constant"
NORMAL = "normal"
MIXTURE = "mixture"
FILE = "file"

_KINDS = (UNIFORM, SEQUENTIAL, CONSTANT, NORMAL, MIXTURE, FILE)


class SpecInvalid(ValueError):
    """A SourceSpec field violated its range."""


class FileUnreadable(OSError):
    """The file behind a file-kind spec could not be read."""


@dataclass(frozen=True)
class SourceSpec:
    """What to generate: distribution kind, size, seed, and shape parameters."""

    kind: str
    pixels: int
    seed: int = 0
    value: int = 127          # constant value / mixture degenerate value
    mean: float = 127.0
    sigma: float = 24.0
    degeneracy: float = 0.0   # mixture share of the degenerate value
    path: str | None = None

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise SpecInvalid(f"unknown source kind {self.kind!r}")
        if self.kind != FILE:
            if self.pixels < 0 or self.pixels % 4 != 0:
                raise SpecInvalid("pixels must be a non-negative multiple of 4")
        if not (0 <= self.value <= 255):
            raise SpecInvalid("value must be in 0..=255")
        if self.kind == NORMAL and self.sigma <= 0:
            raise SpecInvalid("sigma must be positive")
        if self.kind == MIXTURE and not (0.0 <= self.degeneracy <= 1.0):
            raise SpecInvalid("degeneracy must be in [0, 1]")
        if self.kind == FILE and not self.path:
            raise SpecInvalid("file kind needs a path")


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_UNIT = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def _fill_uniform(out, seed):
    state = np.uint64(seed)
    n = out.shape[0]
    i = 0
    while i < n:
        state += _GOLDEN
        z = state
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        for k in range(8):
            if i < n:
                out[i] = np.uint8((z >> np.uint64(8 * k)) & np.uint64(0xFF))
                i += 1


@njit(cache=True)
def _fill_normal(out, seed, mean, sigma):
    state = np.uint64(seed)
    n = out.shape[0]
    for i in range(n):
        total = 0.0
        for _ in range(12):
            state += _GOLDEN
            z = state
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
            z = z ^ (z >> np.uint64(31))
            total += np.float64(z >> np.uint64(11)) * _UNIT
        val = np.floor(mean + sigma * (total - 6.0) + 0.5)
        if val < 0.0:
            val = 0.0
        elif val > 255.0:
            val = 255.0
        out[i] = np.uint8(val)


@njit(cache=True)
def _fill_mixture(out, seed, degeneracy, value):
    state = np.uint64(seed)
    n = out.shape[0]
    for i in range(n):
        state += _GOLDEN
        z = state
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        unit = np.float64(z >> np.uint64(11)) * _UNIT
        if unit < degeneracy:
            out[i] = value
        else:
            state += _GOLDEN
            z = state
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
            z = z ^ (z >> np.uint64(31))
            out[i] = np.uint8(z & np.uint64(0xFF))


def generate(spec: SourceSpec) -> PackedChunk:
    """Deterministically generate the chunk a spec describes."""
    spec.validate()
    if spec.kind == FILE:
        return load_raw_file(spec.path)
    n = spec.pixels
    seed = np.uint64(spec.seed & 0xFFFFFFFFFFFFFFFF)
    if spec.kind == CONSTANT or (spec.kind == MIXTURE and spec.degeneracy == 1.0):
        pixels = np.full(n, spec.value, dtype=np.uint8)
    elif spec.kind == SEQUENTIAL:
        pixels = (np.arange(n, dtype=np.uint32) & 0xFF).astype(np.uint8)
    elif spec.kind == UNIFORM:
        pixels = np.empty(n, dtype=np.uint8)
        _fill_uniform(pixels, seed)
    elif spec.kind == NORMAL:
        pixels = np.empty(n, dtype=np.uint8)
        _fill_normal(pixels, seed, float(spec.mean), float(spec.sigma))
    else:  # MIXTURE
        pixels = np.empty(n, dtype=np.uint8)
        _fill_mixture(pixels, seed, float(spec.degeneracy), spec.value)
    return pack_pixels(pixels)


def load_raw_file(path: str | Path) -> PackedChunk:
    """Headerless raw bytes; trailing bytes beyond a word boundary are dropped."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    usable = len(data) - (len(data) % 4)
    if usable != len(data):
        log.warning(
            "truncating %s: dropped %d trailing bytes to reach a word boundary",
            path, len(data) - usable,
        )
    return pack_pixels(np.frombuffer(data[:usable], dtype=np.uint8))


def derived_spec(spec: SourceSpec, chunk_index: int) -> SourceSpec:
    """Per-chunk spec for a stream: chunk_seed = base_seed XOR chunk_index."""
    return replace(spec, seed=spec.seed ^ chunk_index)


def chunk_stream(spec: SourceSpec, count: int, start_index: int = 0) -> Iterator[PackedChunk]:
    """``count`` chunks with seeds derived from consecutive chunk indices."""
    for i in range(start_index, start_index + count):
        yield generate(derived_spec(spec, i))


def batch_stream(
    spec: SourceSpec, num_iterations: int, batch_size: int = 1
) -> Iterator[list[PackedChunk]]:
    """Batches for the pipeline: iteration i carries chunk indices
    [i * batch_size, (i+1) * batch_size)."""
    for i in range(num_iterations):
        yield [
            generate(derived_spec(spec, i * batch_size + j))
            for j in range(batch_size)
        ]


def schedule_stream(
    segments: list[tuple[SourceSpec, int]], batch_size: int = 1
) -> Iterator[list[PackedChunk]]:
    """Concatenated segments of (spec, iteration count); the chunk index keeps
    counting across segment boundaries so reruns are reproducible."""
    index = 0
    for spec, iterations in segments:
        for _ in range(iterations):
            batch = []
            for _ in range(batch_size):
                batch.append(generate(derived_spec(spec, index)))
                index += 1
            yield batch


def warm_generators() -> None:
    """Compile the generator kernels on tiny inputs."""
    for kind in (UNIFORM, NORMAL, MIXTURE):
        generate(SourceSpec(kind=kind, pixels=8, seed=1, degeneracy=0.5))
