"""histostream: contention-aware 256-bin histogram kernels, a pipelined
streaming engine, and degeneracy-driven kernel switching."""

from .core import (
    BINS,
    CountOverflow,
    Histogram256,
    LengthNotMultipleOfFour,
    PackedChunk,
    PixelValueOutOfRange,
    merge,
    merge_all,
    pack_pixels,
    unpack_chunk,
    unpack_word,
    zero_histogram,
)
from .datagen import FileUnreadable, SourceSpec, SpecInvalid, generate
from .kernels import (
    ABLATION_STAGES,
    AblationTiming,
    KernelKind,
    SubCounterOverflow,
    WorkerGroupConfig,
    adaptive_histogram,
    naive_histogram,
    reduce_subbins,
    reference_histogram,
    run_ablation,
)
from .pattern import (
    DEFAULT_CAP,
    DEFAULT_SLOTS,
    BinningPattern,
    InvalidPattern,
    SlotCountOutOfRange,
    compute_binning_pattern,
    pattern_to_text,
    uniform_pattern,
    validate_pattern,
)
from .policy import (
    DegeneracyReport,
    EmptyHistogram,
    SwitchPolicy,
    degeneracy,
    divergence,
    select_kernel,
)
from .stream import (
    AccumulatorState,
    NegativeCount,
    PipelineConfig,
    PipelineReport,
    SourceExhausted,
    StageProfile,
    StageTiming,
    WindowState,
    accumulator_push,
    batch_histograms,
    run_pipeline,
    run_sequential,
    window_push,
)

__version__ = "0.1.0"
