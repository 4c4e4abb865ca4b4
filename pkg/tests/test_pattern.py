import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from histostream.core import BINS, Histogram256
from histostream.datagen import SourceSpec, generate
from histostream.kernels import reference_histogram
from histostream.pattern import (
    BinningPattern,
    InvalidPattern,
    SlotCountOutOfRange,
    compute_binning_pattern,
    floor_shares,
    pattern_from_text,
    pattern_to_text,
    uniform_pattern,
    validate_pattern,
)


def hist_of(counts):
    return Histogram256(np.asarray(counts, dtype=np.uint64))


class TestUniformPattern:
    def test_exact_division(self):
        p = uniform_pattern(256)
        assert (p.count == 1).all()
        assert p.offset[0] == 0 and p.offset[255] == 255

    def test_960_split(self):
        p = uniform_pattern(960)
        assert (p.count[:192] == 4).all()
        assert (p.count[192:] == 3).all()
        assert int(p.count.sum()) == 960

    def test_saturated(self):
        p = uniform_pattern(2048, cap=8)
        assert (p.count == 8).all()

    @pytest.mark.parametrize("slots", [255, 100, 2049, 10_000])
    def test_out_of_range(self, slots):
        with pytest.raises(SlotCountOutOfRange):
            uniform_pattern(slots, cap=8)


class TestComputePattern:
    def test_zero_prior_equals_uniform(self):
        assert compute_binning_pattern(hist_of([0] * BINS), 960) == uniform_pattern(960)

    def test_fully_degenerate_prior(self):
        counts = [0] * BINS
        counts[127] = 1_000_000
        p = compute_binning_pattern(hist_of(counts), 960, 8)
        assert p.count[127] == 8
        others = np.delete(np.asarray(p.count), 127)
        assert sorted(set(others.tolist())) == [3, 4]
        assert int((others == 4).sum()) == 187
        assert int((others == 3).sum()) == 68
        assert int(p.count.sum()) == 960

    def test_normal_prior_peaks_at_center(self):
        prior = reference_histogram(
            generate(SourceSpec("normal", 1 << 20, seed=5, mean=127, sigma=24))
        )
        p = compute_binning_pattern(prior, 960, 8)
        assert p.count[127] == 8
        assert p.count[127] == p.count.max()
        near = p.count[117:138]
        far = np.concatenate([p.count[:27], p.count[227:]])
        assert near.min() >= far.max()

    def test_monotone_floor_shares(self):
        rng = np.random.default_rng(3)
        prior = hist_of(rng.integers(0, 10_000, BINS))
        shares = floor_shares(prior, 960)
        order = np.argsort(prior.counts, kind="stable")
        assert (np.diff(shares[order]) >= 0).all()

    def test_deterministic(self):
        rng = np.random.default_rng(17)
        prior = hist_of(rng.integers(0, 1 << 30, BINS))
        assert compute_binning_pattern(prior, 960) == compute_binning_pattern(prior, 960)

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        slots=st.integers(256, 2048),
        cap=st.integers(1, 8),
    )
    def test_invariants_hold_for_any_prior(self, seed, slots, cap):
        if slots > BINS * cap:
            slots = BINS * cap
        rng = np.random.default_rng(seed)
        kind = seed % 3
        if kind == 0:
            prior = hist_of(rng.integers(0, 1 << 20, BINS))
        elif kind == 1:
            counts = np.zeros(BINS, np.uint64)
            counts[rng.integers(0, BINS)] = rng.integers(1, 1 << 30)
            prior = Histogram256(counts)
        else:
            prior = hist_of([0] * BINS)
        p = compute_binning_pattern(prior, slots, cap)
        validate_pattern(p)
        assert int(p.count.sum()) == slots
        assert p.count.min() >= 1 and p.count.max() <= cap
        assert p.offset[0] == 0
        assert (p.offset[1:] == (p.offset + p.count)[:-1]).all()


class TestValidate:
    def test_uniform_ok(self):
        validate_pattern(uniform_pattern(960))

    def _with_count(self, mutate):
        base = uniform_pattern(960)
        counts = base.count.copy()
        mutate(counts)
        return BinningPattern(base.offset, counts, 960, 8)

    def test_count_below_one(self):
        bad = self._with_count(lambda c: c.__setitem__(0, 0))
        with pytest.raises(InvalidPattern, match="count below 1"):
            validate_pattern(bad)

    def test_count_above_cap(self):
        bad = self._with_count(lambda c: c.__setitem__(0, 9))
        with pytest.raises(InvalidPattern, match="count above cap"):
            validate_pattern(bad)

    def test_slot_total_mismatch(self):
        base = uniform_pattern(960)
        counts = base.count.copy()
        counts[0] -= 1
        counts[1] += 1  # keep both in range, then claim the wrong total
        bad = BinningPattern(base.offset, counts, 959, 8)
        with pytest.raises(InvalidPattern, match="slot total mismatch"):
            validate_pattern(bad)

    def test_offsets_not_contiguous(self):
        base = uniform_pattern(960)
        offsets = base.offset.copy()
        offsets[10] += 1
        bad = BinningPattern(offsets, base.count, 960, 8)
        with pytest.raises(InvalidPattern, match="offsets not contiguous"):
            validate_pattern(bad)


class TestTextDump:
    def test_format(self):
        text = pattern_to_text(uniform_pattern(960))
        lines = text.strip().splitlines()
        assert len(lines) == 256
        assert lines[0] == "0 0 4"
        assert lines[255] == f"255 {960 - 3} 3"

    def test_round_trip(self):
        rng = np.random.default_rng(23)
        p = compute_binning_pattern(hist_of(rng.integers(0, 999, BINS)), 960)
        assert pattern_from_text(pattern_to_text(p)) == p
