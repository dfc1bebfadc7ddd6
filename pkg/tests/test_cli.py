import json

import pytest

from specsim.cli import build_parser, main
from specsim.perf_model import bundled_profile

SUBCOMMANDS = ["speedup", "threshold", "simulate", "compare-training", "plan", "sweep"]


def small_config(tmp_path, **over):
    workload = {
        "rng_seed": 5,
        "warmup": dict(name="w", num_requests=60, concurrency=8, mean_output_tokens=24, alpha_start=0.6,
                       alpha_ceiling=0.6, tau_samples=1.0),
        "phases": [dict(name="x", num_requests=300, concurrency=8, mean_output_tokens=24, alpha_start=0.3,
                        alpha_ceiling=0.7, tau_samples=60.0, alpha_noise_sd=0.03)],
    }
    (tmp_path / "wl.json").write_text(json.dumps(workload))
    cfg = {
        "profile_path": "gpt-oss-120b",
        "workload_path": "wl.json",
        "mode": "tide_adaptive",
        "seed": 3,
        "controller": {"n_threshold": 32},
        "trainer": {"samples_per_hour": 500000},
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(over)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_unknown_flag_exits_two(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--no-such-flag"])
    assert exc.value.code == 2


def test_global_flags_on_both_sides():
    p = build_parser()
    a = p.parse_args(["--json", "speedup", "--alpha", "0.5"])
    b = p.parse_args(["speedup", "--alpha", "0.5", "--json"])
    assert a.json and b.json


def test_speedup_json(capsys):
    assert main(["speedup", "--alpha", "0.6", "--batch", "1,64", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    rows = {r["batch"]: r for r in out["rows"]}
    assert rows[1]["practical"] == pytest.approx(1.347, abs=1e-3)
    assert rows[1]["theoretical"] == pytest.approx(2.176 / (0.393 / 3.416 * 3 + 1), abs=1e-3)


def test_speedup_alpha_zero_never_helps(capsys):
    assert main(["speedup", "--alpha", "0", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert [r["batch"] for r in rows] == list(bundled_profile("gpt-oss-120b").batch_sizes)
    assert all(r["practical"] < 1 for r in rows)


def test_speedup_bad_profile(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("n,latency_ms\n1,3.0\n1,4.0\n")
    assert main(["speedup", "--alpha", "0.5", "--profile", str(bad)]) == 2
    assert main(["speedup", "--alpha", "0.5", "--profile", "no-such-model"]) == 2


def test_speedup_domain_error(capsys):
    assert main(["speedup", "--alpha", "1.5"]) == 1


def test_threshold(capsys):
    assert main(["threshold", "--batch", "1,64", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert 0 < rows[0]["breakeven_alpha"] < rows[1]["breakeven_alpha"] < 1


def test_compare_training_hours(capsys):
    argv = ["compare-training", "--prefill-hours", "6.16", "--train-hours", "9.16", "--epochs", "3", "--json"]
    assert main(argv) == 0
    rows = {r["mode"]: r for r in json.loads(capsys.readouterr().out)}
    assert rows["offline"]["total_hours"] == pytest.approx(15.32)
    assert rows["online"]["total_hours"] == pytest.approx(27.64)
    assert rows["tide"]["total_hours"] == pytest.approx(9.16)
    assert main(["compare-training", "--prefill-hours", "6.16"]) == 2


def test_plan(capsys):
    argv = ["plan", "--cluster", "H100:8,MI250:4", "--train-class", "MI250", "--speedup", "1.15"]
    assert main(argv) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["relative_throughput"] == pytest.approx(1.071, abs=5e-4)
    assert out["breakeven_speedup"] == pytest.approx(1.0740, abs=5e-5)
    assert out["assignment"] == {"inference": {"H100": 8}, "training": {"MI250": 4}}


def test_plan_infeasible_and_bad_cluster(capsys):
    assert main(["plan", "--cluster", "H100:1", "--speedup", "1.2", "--demand", "99"]) == 1
    assert main(["plan", "--cluster", "H100", "--speedup", "1.2"]) == 2


def test_simulate_is_byte_identical(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["simulate", str(cfg), "--emit-iterations"]) == 0
    first = (tmp_path / "out" / "iterations.csv").read_bytes()
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert main(["simulate", str(cfg), "--emit-iterations"]) == 0
    assert (tmp_path / "out" / "iterations.csv").read_bytes() == first
    assert summary["total_tokens"] > 0 and summary["phases"][1]["phase"] == "x"
    header = first.split(b"\n", 1)[0].decode()
    assert header.split(",")[:3] == ["clock_ms", "batch_size", "speculation_on"]


def test_simulate_seed_and_output_dir_override(tmp_path, capsys):
    cfg = small_config(tmp_path)
    other = tmp_path / "elsewhere"
    assert main(["simulate", str(cfg), "--seed", "4", "--output-dir", str(other), "--emit-iterations"]) == 0
    assert (other / "iterations.csv").exists() and not (tmp_path / "out").exists()


def test_simulate_without_csv_flag(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["simulate", str(cfg), "--mode", "speculation_off"]) == 0
    assert (tmp_path / "out" / "summary.json").exists()
    assert not (tmp_path / "out" / "iterations.csv").exists()


def test_simulate_config_errors(tmp_path, capsys):
    assert main(["simulate", str(small_config(tmp_path, colour="red"))]) == 2
    assert main(["simulate", str(small_config(tmp_path, workload_path="missing.json"))]) == 2
    assert main(["simulate", str(small_config(tmp_path, trainer=None))]) == 2
    assert main(["simulate", str(tmp_path / "nope.json")]) == 2


def test_sweep_order_is_deterministic(tmp_path, capsys):
    cfg = small_config(tmp_path)
    argv = ["sweep", str(cfg), "--modes", "speculation_off,tide_default", "--seeds", "1,2"]
    assert main(argv + ["--jobs", "2"]) == 0
    parallel = (tmp_path / "out" / "sweep.csv").read_text()
    assert main(argv) == 0
    serial = (tmp_path / "out" / "sweep.csv").read_text()
    assert parallel == serial
    rows = serial.strip().splitlines()[1:]
    assert [r.split(",")[:2] for r in rows] == [
        ["speculation_off", "1"], ["speculation_off", "2"], ["tide_default", "1"], ["tide_default", "2"]
    ]
