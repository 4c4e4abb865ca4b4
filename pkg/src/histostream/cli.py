"""Benchmark and experiment driver.

Five modes, each writing a schema-stable CSV:

  genealogy  the five cumulative kernel stages, copy-only through full,
             with median throughput per stage and an ordering check
  compare    naive vs adaptive throughput on the five benchmark
             distributions, adaptive pattern trained on a held-out prior
  sweep      both kernels across mixture degeneracy 0..100%, with the
             policy's kernel choice and the empirical crossover
  pipeline   sequential vs double-buffered pipelined streaming run on
             identical seeded input, plus the stage-percentage summary
  stream     end-to-end run on a schedule whose distribution changes
             mid-stream, with live pattern recompute and kernel switching,
             checked against the sequential oracle

Configuration precedence: command-line flags override the optional JSON
config file (--config), which overrides built-in defaults. Timing cells are
medians over --repetitions runs; orderings use a 10% noise guard and only an
inverted ordering fails the run.
"""
from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import bench, datagen
from .bench import Verdict
from .datagen import SourceSpec, generate
from .kernels import (
    ABLATION_STAGES,
    KernelKind,
    WorkerGroupConfig,
    adaptive_histogram,
    naive_histogram,
    reference_histogram,
    run_ablation,
    warm_kernels,
)
from .pattern import compute_binning_pattern, pattern_to_text
from .policy import SwitchPolicy, degeneracy, select_kernel
from .stream import PipelineConfig, StageProfile, run_pipeline, run_sequential

MODES = ("genealogy", "compare", "sweep", "pipeline", "stream")

# kernel-benchmark modes default to the full 8192x8192-pixel chunk; the
# streaming modes run many iterations, so their chunks default much smaller
PIXEL_DEFAULTS = {
    "genealogy": 8192 * 8192,
    "compare": 8192 * 8192,
    "sweep": 8192 * 8192,
    "pipeline": 1 << 20,
    "stream": 1 << 20,
}


@dataclass
class RunConfig:
    mode: str
    source: str = "random"
    seed: int = 0
    pixels: int | None = None
    group_size: int = 32
    group_count: int = 4
    slots: int = 960
    cap: int = 8
    threshold: float = 0.45
    window: int = 128
    iterations: int = 64
    batch: int = 1
    bandwidth_in: float = 0.0
    bandwidth_out: float = 0.0
    recompute_every: int = 1
    profile: str | None = None
    out: str | None = None
    pattern_dump: str | None = None
    repetitions: int = 5

    def resolved_pixels(self) -> int:
        return self.pixels if self.pixels is not None else PIXEL_DEFAULTS[self.mode]

    def worker(self) -> WorkerGroupConfig:
        return WorkerGroupConfig(self.group_size, self.group_count)

    def policy(self) -> SwitchPolicy:
        return SwitchPolicy(self.threshold)

    def out_path(self) -> Path:
        return Path(self.out if self.out else f"histostream_{self.mode}.csv")


class ConfigError(ValueError):
    pass


def parse_source(text: str, pixels: int, seed: int) -> SourceSpec:
    """One source spec: random | sequential | constant:V | normal[:MEAN[:SIGMA]]
    | mixture:P[:V] | file:PATH."""
    head, _, rest = text.partition(":")
    head = head.strip().lower()
    try:
        if head in ("random", "uniform"):
            return SourceSpec(datagen.UNIFORM, pixels, seed)
        if head == "sequential":
            return SourceSpec(datagen.SEQUENTIAL, pixels, seed)
        if head == "constant":
            return SourceSpec(datagen.CONSTANT, pixels, seed, value=int(rest or 127))
        if head == "normal":
            parts = [p for p in rest.split(":") if p]
            mean = float(parts[0]) if parts else 127.0
            sigma = float(parts[1]) if len(parts) > 1 else 24.0
            return SourceSpec(datagen.NORMAL, pixels, seed, mean=mean, sigma=sigma)
        if head == "mixture":
            parts = [p for p in rest.split(":") if p]
            if not parts:
                raise ConfigError("mixture needs a degeneracy, e.g. mixture:0.6")
            p = float(parts[0])
            v = int(parts[1]) if len(parts) > 1 else 127
            return SourceSpec(datagen.MIXTURE, pixels, seed, value=v, degeneracy=p)
        if head == "file":
            if not rest:
                raise ConfigError("file source needs a path, e.g. file:/data/raw.bin")
            return SourceSpec(datagen.FILE, 0, seed, path=rest)
    except ValueError as exc:
        raise ConfigError(f"bad source {text!r}: {exc}") from exc
    raise ConfigError(f"unknown source kind {text!r}")


def parse_schedule(text: str, pixels: int, seed: int) -> list[tuple[SourceSpec, int]]:
    """Comma-separated segments "SPEC@COUNT" for the stream mode, e.g.
    "random@100,constant:127@100". A bare SPEC means one full-length segment."""
    segments = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        spec_text, _, count_text = part.partition("@")
        count = int(count_text) if count_text else None
        segments.append((parse_source(spec_text, pixels, seed), count))
    if not segments:
        raise ConfigError("empty schedule")
    return segments


def load_profile(path: str) -> StageProfile:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load profile {path}: {exc}") from exc
    allowed = {f.name for f in fields(StageProfile)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown profile keys: {sorted(unknown)}")
    return StageProfile(**{k: float(v) for k, v in raw.items()})


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(row + "\n")


def _dump_pattern(run: RunConfig, pattern) -> None:
    if run.pattern_dump:
        Path(run.pattern_dump).write_text(pattern_to_text(pattern))


def _trained_pattern(run: RunConfig, spec: SourceSpec):
    """Pattern trained on a held-out prior chunk (chunk index 1) of the same
    distribution; the measured chunk uses index 0."""
    prior = generate(datagen.derived_spec(spec, 1))
    return compute_binning_pattern(reference_histogram(prior), run.slots, run.cap)


def mode_genealogy(run: RunConfig) -> int:
    warm_kernels()
    spec = parse_source(run.source, run.resolved_pixels(), run.seed)
    chunk = generate(datagen.derived_spec(spec, 0))
    pattern = _trained_pattern(run, spec)
    cfg = run.worker()

    full = run_ablation(chunk, KernelKind.FULL, pattern, cfg)
    if full.histogram != reference_histogram(chunk):
        print("FATAL: full-stage histogram does not match the reference", file=sys.stderr)
        return 1

    # interleave the stages within each repetition, in a different order each
    # time, so host-speed drift cannot systematically land on one stage
    samples: dict[KernelKind, list[float]] = {stage: [] for stage in ABLATION_STAGES}
    for stage in ABLATION_STAGES:
        run_ablation(chunk, stage, pattern, cfg)  # warm/page-touch pass
    order_rng = random.Random(run.seed)
    for _ in range(run.repetitions):
        order = list(ABLATION_STAGES)
        order_rng.shuffle(order)
        for stage in order:
            samples[stage].append(run_ablation(chunk, stage, pattern, cfg).duration_s)

    rows = []
    throughputs = []
    durations = []
    spreads = []
    for stage in ABLATION_STAGES:
        durations.append(bench.median(samples[stage]))
        spreads.append(bench.relative_spread(samples[stage]))
        tp = chunk.byte_size / durations[-1]
        throughputs.append(tp)
        rows.append(f"{stage.value},{tp:.0f}")

    status = 0
    for i in range(1, len(throughputs)):
        verdict = bench.ordering(throughputs[i - 1], throughputs[i])
        # a failing exit needs the inversion to clear both the fixed guard and
        # the measured sample spread of the pair, and both measurements must
        # be long enough to mean anything
        allowance = max(bench.NOISE_GUARD, spreads[i - 1] + spreads[i])
        meaningful = min(durations[i - 1], durations[i]) >= bench.NOISE_FLOOR_S
        inverted_hard = throughputs[i] > throughputs[i - 1] * (1.0 + allowance)
        if verdict is Verdict.INVERTED and inverted_hard and meaningful:
            print(f"ORDERING INVERTED: {ABLATION_STAGES[i].value} faster than "
                  f"{ABLATION_STAGES[i-1].value} beyond guard and measured noise",
                  file=sys.stderr)
            status = 1
        elif verdict is not Verdict.CONFIRMED:
            print(f"note: {ABLATION_STAGES[i-1].value} vs {ABLATION_STAGES[i].value} "
                  f"{verdict.value}"
                  + ("" if meaningful else " (below noise floor)"),
                  file=sys.stderr)

    _write_csv(run.out_path(), "stage,throughput_bytes_per_sec", rows)
    _dump_pattern(run, pattern)
    print(f"wrote {run.out_path()}")
    return status


COMPARE_DISTRIBUTIONS = (
    ("random", "random"),
    ("sequential", "sequential"),
    ("constant_127", "constant:127"),
    ("constant_1", "constant:1"),
    ("normal", "normal:127:24"),
)


def mode_compare(run: RunConfig) -> int:
    warm_kernels()
    cfg = run.worker()
    rows = []
    cells: dict[tuple[str, str], float] = {}
    for name, source_text in COMPARE_DISTRIBUTIONS:
        spec = parse_source(source_text, run.resolved_pixels(), run.seed)
        chunk = generate(datagen.derived_spec(spec, 0))
        prior_hist = reference_histogram(generate(datagen.derived_spec(spec, 1)))
        pattern = compute_binning_pattern(prior_hist, run.slots, run.cap)
        reference = reference_histogram(chunk)

        if naive_histogram(chunk, cfg) != reference:
            print(f"FATAL: naive kernel wrong on {name}", file=sys.stderr)
            return 1
        if adaptive_histogram(chunk, pattern, cfg) != reference:
            print(f"FATAL: adaptive kernel wrong on {name}", file=sys.stderr)
            return 1

        samples = bench.interleaved_samples(
            {
                "naive": lambda: naive_histogram(chunk, cfg),
                "adaptive": lambda: adaptive_histogram(chunk, pattern, cfg),
                "adaptive_e2e": lambda: adaptive_histogram(
                    chunk, compute_binning_pattern(prior_hist, run.slots, run.cap), cfg
                ),
            },
            run.repetitions,
            shuffle_seed=run.seed,
        )
        naive_dur = bench.median(samples["naive"])
        adaptive_dur = bench.median(samples["adaptive"])
        adaptive_e2e = chunk.byte_size / bench.median(samples["adaptive_e2e"])
        naive_tp = chunk.byte_size / naive_dur
        adaptive_tp = chunk.byte_size / adaptive_dur
        cells[(name, "naive")] = naive_tp
        cells[(name, "adaptive")] = adaptive_tp
        cells[(name, "allow")] = max(
            bench.NOISE_GUARD,
            bench.relative_spread(samples["naive"]) + bench.relative_spread(samples["adaptive"]),
        )
        cells[(name, "floor")] = min(naive_dur, adaptive_dur) >= bench.NOISE_FLOOR_S
        rows.append(f"{name},naive,{naive_tp:.0f},{naive_tp:.0f}")
        rows.append(f"{name},adaptive,{adaptive_tp:.0f},{adaptive_e2e:.0f}")

    def check(name, expected_faster, expected_slower, label):
        verdict = bench.ordering(cells[(name, expected_faster)], cells[(name, expected_slower)])
        inverted_hard = (
            cells[(name, expected_slower)]
            > cells[(name, expected_faster)] * (1.0 + cells[(name, "allow")])
        )
        if verdict is Verdict.INVERTED and inverted_hard and cells[(name, "floor")]:
            print(f"ORDERING INVERTED: {label}", file=sys.stderr)
            return 1
        print(f"{name}: {expected_faster} vs {expected_slower} {verdict.value}")
        return 0

    status = 0
    status |= check("constant_127", "adaptive", "naive", "naive beat adaptive on constant_127")
    status |= check("random", "naive", "adaptive", "adaptive beat naive on random")

    _write_csv(
        run.out_path(),
        "distribution,kernel,throughput_bytes_per_sec,end_to_end_bytes_per_sec",
        rows,
    )
    print(f"wrote {run.out_path()}")
    return status


def mode_sweep(run: RunConfig) -> int:
    warm_kernels()
    cfg = run.worker()
    policy = run.policy()
    pixels = run.resolved_pixels()
    base = parse_source(run.source, pixels, run.seed)
    value = base.value if base.kind == datagen.MIXTURE else 127

    rows = []
    crossover = None
    pattern = None
    for step, pct in enumerate(range(0, 101, 10)):
        spec = SourceSpec(
            datagen.MIXTURE, pixels, run.seed, value=value, degeneracy=pct / 100.0
        )
        chunk = generate(datagen.derived_spec(spec, 2 * step))
        prior_hist = reference_histogram(generate(datagen.derived_spec(spec, 2 * step + 1)))
        pattern = compute_binning_pattern(prior_hist, run.slots, run.cap)
        reference = reference_histogram(chunk)
        if naive_histogram(chunk, cfg) != reference:
            print(f"FATAL: naive kernel wrong at d={pct}%", file=sys.stderr)
            return 1
        if adaptive_histogram(chunk, pattern, cfg) != reference:
            print(f"FATAL: adaptive kernel wrong at d={pct}%", file=sys.stderr)
            return 1

        medians = bench.interleaved_median_durations(
            {
                "naive": lambda: naive_histogram(chunk, cfg),
                "adaptive": lambda: adaptive_histogram(chunk, pattern, cfg),
            },
            run.repetitions,
            shuffle_seed=run.seed + pct,
        )
        naive_tp = chunk.byte_size / medians["naive"]
        adaptive_tp = chunk.byte_size / medians["adaptive"]
        selected = select_kernel(degeneracy(reference), policy)
        if crossover is None and adaptive_tp >= naive_tp:
            crossover = pct
        rows.append(f"{pct},{naive_tp:.0f},{adaptive_tp:.0f},{selected.value}")

    rows.append(f"crossover,{'' if crossover is None else crossover},,")
    _write_csv(run.out_path(), "degeneracy,naive_tp,adaptive_tp,selected_kernel", rows)
    if pattern is not None:
        _dump_pattern(run, pattern)
    print(f"empirical crossover: {crossover}%" if crossover is not None
          else "no crossover observed")
    print(f"wrote {run.out_path()}")
    return 0


def _pipeline_config(run: RunConfig) -> PipelineConfig:
    return PipelineConfig(
        num_iterations=run.iterations,
        chunk_pixels=run.resolved_pixels(),
        batch_size=run.batch,
        recompute_pattern_every=run.recompute_every,
        window_size=run.window,
        simulated_bandwidth_in=run.bandwidth_in,
        simulated_bandwidth_out=run.bandwidth_out,
        total_slots=run.slots,
        cap=run.cap,
        worker=run.worker(),
        stage_profile=load_profile(run.profile) if run.profile else None,
    )


def _states_match(seq, pipe) -> bool:
    seq_acc, seq_win, seq_report, seq_log = seq
    pipe_acc, pipe_win, pipe_report, pipe_log = pipe
    return (
        seq_acc == pipe_acc
        and seq_win == pipe_win
        and seq_log == pipe_log
        and seq_report.per_slice_histograms == pipe_report.per_slice_histograms
    )


def mode_pipeline(run: RunConfig) -> int:
    warm_kernels()
    cfg = _pipeline_config(run)
    policy = run.policy()
    spec = parse_source(run.source, cfg.chunk_pixels, run.seed)

    seq = run_sequential(datagen.batch_stream(spec, cfg.num_iterations, cfg.batch_size),
                         cfg, policy)
    pipe = run_pipeline(datagen.batch_stream(spec, cfg.num_iterations, cfg.batch_size),
                        cfg, policy)
    if not _states_match(seq, pipe):
        print("FATAL: pipelined state diverged from the sequential oracle", file=sys.stderr)
        return 1

    seq_report, pipe_report = seq[2], pipe[2]
    with open(run.out_path(), "w") as f:
        pipe_report.to_csv(f)

    totals = seq_report.stage_totals_ns()
    seq_total = seq_report.total_sequential_ns
    print("stage percentages of total sequential time:")
    for name, ns in totals.items():
        print(f"  {name[:-3]:13s} {100.0 * ns / seq_total:6.2f}%")
    print(f"total sequential {seq_report.total_sequential_us:.0f} us")
    print(f"pipelined wall   {pipe_report.total_pipelined_us:.0f} us")
    print(f"pipelined pct    {100.0 * pipe_report.total_pipelined_ns / seq_total:.2f}% "
          f"(vs own stage sum: {pipe_report.pipelined_pct:.2f}%)")
    _dump_pattern(run, compute_binning_pattern(pipe[1].windowed, run.slots, run.cap))
    print(f"wrote {run.out_path()}")
    return 0


def mode_stream(run: RunConfig) -> int:
    warm_kernels()
    cfg = _pipeline_config(run)
    policy = run.policy()
    segments = parse_schedule(run.source, cfg.chunk_pixels, run.seed)
    resolved = []
    declared = sum(count for _, count in segments if count is not None)
    open_slots = sum(1 for _, count in segments if count is None)
    leftover = cfg.num_iterations - declared
    if leftover < 0 or (open_slots == 0 and leftover != 0):
        raise ConfigError(
            f"schedule covers {declared} iterations but --iterations is {cfg.num_iterations}"
        )
    for spec, count in segments:
        if count is None:
            count = leftover // open_slots
            open_slots -= 1
            leftover -= count
        resolved.append((spec, count))

    seq = run_sequential(
        datagen.schedule_stream(resolved, cfg.batch_size), cfg, policy
    )
    pipe = run_pipeline(
        datagen.schedule_stream(resolved, cfg.batch_size), cfg, policy
    )
    if not _states_match(seq, pipe):
        print("FATAL: pipelined state diverged from the sequential oracle", file=sys.stderr)
        return 1

    report = pipe[2]
    with open(run.out_path(), "w") as f:
        report.to_csv(f, extended=True)

    switches = [
        i for i in range(1, len(report.kernel_log))
        if report.kernel_log[i] != report.kernel_log[i - 1]
    ]
    print(f"kernel switches at iterations: {switches}" if switches
          else "kernel choice never changed")
    print(f"peak divergence: {max(report.divergence_log):.4f}")
    _dump_pattern(run, compute_binning_pattern(pipe[1].windowed, run.slots, run.cap))
    print(f"wrote {run.out_path()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="histostream",
        description="benchmark driver for the contention-aware histogram engine",
    )
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--source", help="distribution, e.g. random, constant:127, "
                   "mixture:0.6:127, file:PATH; stream mode takes SPEC@N segments")
    p.add_argument("--seed", type=int)
    p.add_argument("--pixels", type=int, help="pixels per chunk (multiple of 4)")
    p.add_argument("--group-size", type=int, dest="group_size")
    p.add_argument("--group-count", type=int, dest="group_count")
    p.add_argument("--slots", type=int, help="sub-counter slots, default 960")
    p.add_argument("--cap", type=int, help="max sub-bins per bin, default 8")
    p.add_argument("--threshold", type=float, help="switch threshold, default 0.45")
    p.add_argument("--window", type=int, help="moving window size, default 128")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch", type=int, help="slices per pipeline iteration")
    p.add_argument("--bandwidth-in", type=float, dest="bandwidth_in",
                   help="synthetic input bus bytes/s, 0 disables")
    p.add_argument("--bandwidth-out", type=float, dest="bandwidth_out")
    p.add_argument("--recompute-every", type=int, dest="recompute_every")
    p.add_argument("--profile", help="JSON file of synthetic per-stage microseconds")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--pattern-dump", dest="pattern_dump",
                   help="write the trained binning pattern to this path")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--config", help="JSON config file; flags override it")
    return p


def resolve_config(argv: list[str] | None = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    layered: dict = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(file_cfg) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        layered.update(file_cfg)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            layered[f.name] = value
    if "mode" not in layered:
        raise ConfigError("--mode is required (flag or config file)")
    if layered["mode"] not in MODES:
        raise ConfigError(f"unknown mode {layered['mode']!r}")
    return RunConfig(**layered)


def main(argv: list[str] | None = None) -> int:
    try:
        run = resolve_config(argv)
        handler = {
            "genealogy": mode_genealogy,
            "compare": mode_compare,
            "sweep": mode_sweep,
            "pipeline": mode_pipeline,
            "stream": mode_stream,
        }[run.mode]
        return handler(run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
