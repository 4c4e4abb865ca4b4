import json

import pytest

from histostream import datagen
from histostream.cli import (
    ConfigError,
    main,
    parse_schedule,
    parse_source,
    resolve_config,
)

TINY = ["--pixels", "1024", "--repetitions", "2", "--group-size", "4",
        "--group-count", "2"]


class TestParseSource:
    def test_plain_kinds(self):
        assert parse_source("random", 64, 1).kind == datagen.UNIFORM
        assert parse_source("uniform", 64, 1).kind == datagen.UNIFORM
        assert parse_source("sequential", 64, 1).kind == datagen.SEQUENTIAL

    def test_constant(self):
        spec = parse_source("constant:9", 64, 1)
        assert spec.kind == datagen.CONSTANT and spec.value == 9
        assert parse_source("constant", 64, 1).value == 127

    def test_normal(self):
        spec = parse_source("normal:100:10", 64, 1)
        assert spec.mean == 100.0 and spec.sigma == 10.0
        assert parse_source("normal", 64, 1).sigma == 24.0

    def test_mixture(self):
        spec = parse_source("mixture:0.6:42", 64, 1)
        assert spec.degeneracy == 0.6 and spec.value == 42

    def test_file(self):
        assert parse_source("file:/tmp/x.bin", 64, 1).path == "/tmp/x.bin"

    @pytest.mark.parametrize("text", ["mixture", "file", "blah", "constant:x"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_source(text, 64, 1)

    def test_schedule(self):
        segs = parse_schedule("random@3,constant:127@5", 64, 1)
        assert [count for _, count in segs] == [3, 5]
        assert segs[1][0].value == 127

    def test_schedule_open_segment(self):
        segs = parse_schedule("random", 64, 1)
        assert segs[0][1] is None


class TestConfigLayering:
    def test_flags_override_config(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"mode": "sweep", "pixels": 4096, "seed": 9}))
        run = resolve_config(["--config", str(cfg_file), "--pixels", "2048"])
        assert run.mode == "sweep"
        assert run.pixels == 2048   # flag wins
        assert run.seed == 9        # config wins over default

    def test_mode_required(self):
        with pytest.raises(ConfigError):
            resolve_config(["--pixels", "64"])

    def test_unknown_config_key(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"mode": "sweep", "bogus": 1}))
        with pytest.raises(ConfigError):
            resolve_config(["--config", str(cfg_file)])

    def test_mode_pixel_defaults(self):
        assert resolve_config(["--mode", "compare"]).resolved_pixels() == 8192 * 8192
        assert resolve_config(["--mode", "pipeline"]).resolved_pixels() == 1 << 20

    def test_config_error_exit_code(self, capsys):
        assert main(["--pixels", "64"]) == 2
        assert "config error" in capsys.readouterr().err


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    return lines[0], lines[1:]


class TestGenealogyMode:
    def test_tiny_run(self, tmp_path, capsys):
        out = tmp_path / "genealogy.csv"
        status = main(["--mode", "genealogy", "--out", str(out), *TINY])
        assert status == 0
        header, rows = read_csv(out)
        assert header == "stage,throughput_bytes_per_sec"
        assert [r.split(",")[0] for r in rows] == [
            "copy_only", "copy_init", "pattern_load", "subhist_noreduce", "full"
        ]
        assert all(float(r.split(",")[1]) > 0 for r in rows)


class TestCompareMode:
    def test_tiny_run(self, tmp_path):
        out = tmp_path / "compare.csv"
        status = main(["--mode", "compare", "--out", str(out), *TINY])
        assert status == 0
        header, rows = read_csv(out)
        assert header == "distribution,kernel,throughput_bytes_per_sec,end_to_end_bytes_per_sec"
        assert len(rows) == 10
        names = {r.split(",")[0] for r in rows}
        assert names == {"random", "sequential", "constant_127", "constant_1", "normal"}


class TestSweepMode:
    def test_tiny_run(self, tmp_path):
        out = tmp_path / "sweep.csv"
        status = main(["--mode", "sweep", "--out", str(out), "--seed", "3", *TINY])
        assert status == 0
        header, rows = read_csv(out)
        assert header == "degeneracy,naive_tp,adaptive_tp,selected_kernel"
        assert len(rows) == 12  # 11 degeneracy points + crossover summary
        assert rows[-1].startswith("crossover,")
        assert rows[0].split(",")[3] == "naive"      # d=0 under threshold 0.45
        assert rows[10].split(",")[3] == "adaptive"  # d=100 fully degenerate

    def test_non_timing_columns_deterministic(self, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["--mode", "sweep", "--out", str(out), "--seed", "11", *TINY]) == 0
            _, rows = read_csv(out)
            outs.append([(r.split(",")[0], r.split(",")[3]) for r in rows[:-1]])
        assert outs[0] == outs[1]


class TestPipelineMode:
    def test_profile_run(self, tmp_path, capsys):
        profile = tmp_path / "profile.json"
        profile.write_text(json.dumps({
            "cpu_pre_us": 300, "transfer_in_us": 200, "compute_us": 900,
            "transfer_out_us": 5, "cpu_post_us": 0,
        }))
        out = tmp_path / "pipeline.csv"
        status = main([
            "--mode", "pipeline", "--out", str(out), "--pixels", "512",
            "--iterations", "6", "--window", "4", "--group-size", "4",
            "--group-count", "2", "--profile", str(profile),
        ])
        assert status == 0
        header, rows = read_csv(out)
        assert header.startswith("iteration,cpu_pre_us")
        assert len(rows) == 7  # 6 iterations + summary
        assert rows[-1].startswith("summary,")
        console = capsys.readouterr().out
        assert "stage percentages" in console
        assert "pipelined pct" in console

    def test_bad_profile(self, tmp_path):
        profile = tmp_path / "profile.json"
        profile.write_text(json.dumps({"nope": 1}))
        status = main(["--mode", "pipeline", "--profile", str(profile),
                       "--pixels", "512", "--iterations", "2"])
        assert status == 2


class TestStreamMode:
    def test_schedule_switches_kernel(self, tmp_path, capsys):
        out = tmp_path / "stream.csv"
        status = main([
            "--mode", "stream", "--out", str(out),
            "--source", "random@6,constant:127@6", "--iterations", "12",
            "--pixels", "512", "--window", "2", "--group-size", "4",
            "--group-count", "2",
        ])
        assert status == 0
        header, rows = read_csv(out)
        assert header.endswith(",degeneracy,divergence")
        kernels = [r.split(",")[6] for r in rows[:-1]]
        assert kernels[0] == "naive"
        assert "adaptive" in kernels
        console = capsys.readouterr().out
        assert "kernel switches at iterations" in console

    def test_schedule_iteration_mismatch(self, tmp_path):
        status = main([
            "--mode", "stream", "--source", "random@3,constant:127@3",
            "--iterations", "10", "--pixels", "512",
        ])
        assert status == 2


class TestPatternDump:
    def test_dump_written(self, tmp_path):
        out = tmp_path / "sweep.csv"
        dump = tmp_path / "pattern.txt"
        status = main(["--mode", "sweep", "--out", str(out),
                       "--pattern-dump", str(dump), *TINY])
        assert status == 0
        lines = dump.read_text().strip().splitlines()
        assert len(lines) == 256
        bin_index, offset, count = lines[0].split()
        assert bin_index == "0" and offset == "0" and int(count) >= 1
