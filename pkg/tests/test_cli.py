import json

import numpy as np

from sbrl import cli


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def example1_external_config(out_dir, gamma_sq=0.08):
    return {
        "seed": 7,
        "system": {"builtin": "example1"},
        "storage": {"builtin": "example1", "p": 4.0},
        "certificate": {
            "kind": "external",
            "beta": 1.0 / 0.99,
            "gamma_sq": gamma_sq,
            "domain": {"lo": [-10.0], "hi": [10.0], "grid": 201},
            "scheme": {"mode": "closed-form"},
        },
        "output": {"dir": str(out_dir), "formats": ["csv"]},
    }


def run(args):
    return cli.main(args)


def test_certify_example1_exit_zero(tmp_path):
    cfg = write_config(tmp_path, example1_external_config(tmp_path / "out"))
    assert run(["certify", "--config", cfg]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["status"] == "certified"
    margins = json.loads((tmp_path / "out" / "margins.json").read_text())
    assert abs(margins["h1_worst"]) < 1e-10


def test_certify_small_gamma_exit_one(tmp_path):
    cfg = write_config(tmp_path,
                       example1_external_config(tmp_path / "out", gamma_sq=0.05))
    assert run(["certify", "--config", cfg]) == 1


def test_malformed_config_exit_two(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert run(["certify", "--config", str(path)]) == 2


def test_schema_violation_reports_field_path(tmp_path, capsys):
    cfg = {"system": {"builtin": "nope"},
           "certificate": {"kind": "wat"}}
    path = write_config(tmp_path, cfg)
    assert run(["certify", "--config", path]) == 2
    err = capsys.readouterr().err
    assert "system.builtin" in err
    assert "certificate.kind" in err


def test_gain_example1_consistent(tmp_path):
    cfg = {
        "seed": 5,
        "system": {"builtin": "example1"},
        "ensemble": {"horizon": 100, "count": 50, "gamma_sq": 0.08,
                     "disturbance": {"kind": "decaying-sine", "freqs": [0.3]}},
        "output": {"dir": str(tmp_path / "out"), "formats": ["csv"]},
    }
    assert run(["gain", "--config", write_config(tmp_path, cfg)]) == 0
    reports = json.loads((tmp_path / "out" / "gain_reports.json").read_text())
    assert reports[0]["max_ratio"] < 0.08
    ratios = (tmp_path / "out" / "gain_ratios.csv").read_text().splitlines()
    assert ratios[0] == "trajectory,energy_ratio"
    assert len(ratios) == 51


def test_gain_feedthrough_counterexample_exit_one(tmp_path):
    cfg = {
        "seed": 5,
        "system": {"linear": {"A": [[0.0]], "A0": [[0.0]], "B": [[0.0]],
                              "C": [[0.0]], "D": [[1.0]]}},
        "ensemble": {"horizon": 50, "count": 30, "gamma_sq": 0.5,
                     "disturbance": {"kind": "white", "std": 1.0}},
        "output": {"dir": str(tmp_path / "out")},
    }
    assert run(["gain", "--config", write_config(tmp_path, cfg)]) == 1


def test_gain_zero_count_rejected(tmp_path):
    cfg = {
        "system": {"builtin": "example1"},
        "ensemble": {"horizon": 10, "count": 0, "gamma_sq": 0.08,
                     "disturbance": {"kind": "white"}},
        "output": {"dir": str(tmp_path / "out")},
    }
    assert run(["gain", "--config", write_config(tmp_path, cfg)]) == 2


def test_simulate_geometric_decay_rows(tmp_path):
    cfg = {
        "seed": 1,
        "system": {"linear": {"A": [[0.5]], "A0": [[0.0]], "B": [[0.0]],
                              "C": [[1.0]], "D": [[0.0]]}},
        "ensemble": {"horizon": 5, "count": 1, "x0": [1.0],
                     "disturbance": {"kind": "zero"}},
        "output": {"dir": str(tmp_path / "out"), "formats": ["csv"]},
    }
    assert run(["simulate", "--config", write_config(tmp_path, cfg)]) == 0
    lines = (tmp_path / "out" / "trajectory_000.csv").read_text().splitlines()
    assert lines[0] == "k,x_1,v_1,z_sq,v_sq,cum_z_sq,cum_v_sq"
    assert len(lines) == 7  # header + K+1 rows
    for k, line in enumerate(lines[1:]):
        assert line.split(",")[1] == repr(0.5 ** k)


def test_simulate_example2_open_loop_row_count(tmp_path):
    cfg = {
        "seed": 2,
        "system": {"builtin": "example2"},
        "ensemble": {"horizon": 12, "count": 1, "x0": [1.0, 1.0, 0.5],
                     "disturbance": {"kind": "zero"}},
        "output": {"dir": str(tmp_path / "out"), "formats": ["csv"]},
    }
    assert run(["simulate", "--config", write_config(tmp_path, cfg)]) == 0
    lines = (tmp_path / "out" / "trajectory_000.csv").read_text().splitlines()
    assert len(lines) == 14


def test_simulate_divergence_partial_csv_exit_two(tmp_path):
    cfg = {
        "seed": 1,
        "system": {"linear": {"A": [[2.0]], "A0": [[0.0]], "B": [[0.0]],
                              "C": [[1.0]], "D": [[0.0]]}},
        "ensemble": {"horizon": 200, "count": 1, "x0": [1.0],
                     "disturbance": {"kind": "zero"}},
        "output": {"dir": str(tmp_path / "out"), "formats": ["csv"]},
    }
    assert run(["simulate", "--config", write_config(tmp_path, cfg)]) == 2
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert "divergence at step" in report["status"]
    assert (tmp_path / "out" / "trajectory_000.csv").exists()


def test_linear_brl_boundary_and_falsification(tmp_path):
    base = {
        "system": {"linear": {"A": [[0.5]], "A0": [[0.0]], "B": [[1.0]],
                              "C": [[0.5]], "D": [[0.0]]}},
        "certificate": {"kind": "linear-brl", "P": [[0.5]], "beta": 2.0,
                        "gamma_sq": 2.0},
        "output": {"dir": str(tmp_path / "out")},
    }
    assert run(["linear-brl", "--config", write_config(tmp_path, base)]) == 0
    rep = json.loads((tmp_path / "out" / "linear_brl.json").read_text())
    assert abs(rep["eq_gain_margin"]) <= 1e-12
    base["certificate"]["gamma_sq"] = 1.9
    base["output"]["dir"] = str(tmp_path / "out2")
    assert run(["linear-brl", "--config",
                write_config(tmp_path, base, "b.json")]) == 1


def test_linear_brl_search_via_cli(tmp_path):
    cfg = {
        "system": {"linear": {"A": [[0.5]], "A0": [[0.0]], "B": [[1.0]],
                              "C": [[0.5]], "D": [[0.0]]}},
        "certificate": {"kind": "linear-brl", "search": True, "gamma_sq": 1e6},
        "output": {"dir": str(tmp_path / "out")},
    }
    assert run(["linear-brl", "--config", write_config(tmp_path, cfg)]) == 0


def test_example_one_summary(tmp_path):
    out = tmp_path / "ex1"
    assert run(["example", "1", "--out", str(out), "--seed", "3"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["gamma_star_sq"] - 0.08) < 1e-12
    assert summary["certificate_status"] == "certified"
    assert (out / "example1_series.csv").exists()
    assert (out / "example1_series.svg").exists()


def test_example_two_summary(tmp_path):
    out = tmp_path / "ex2"
    assert run(["example", "2", "--out", str(out), "--seed", "3",
                "--format", "csv"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["certificate_status"] == "certified"
    assert abs(summary["G_beta"] - 0.430998734648594) < 1e-10
    assert summary["G_beta"] <= 0.5625
    assert summary["gain_verdict"] == "consistent"
    assert (out / "example2_states.csv").exists()
    assert not (out / "example2_states.svg").exists()  # csv-only run


def test_example_unknown_exit_two(tmp_path):
    assert run(["example", "3", "--out", str(tmp_path / "x")]) == 2


def test_top_level_noise_block_overrides_example1(tmp_path):
    cfg = example1_external_config(tmp_path / "out")
    cfg["noise"] = {"dim": 1, "components": ["rademacher"]}
    assert run(["certify", "--config", write_config(tmp_path, cfg)]) == 0
    resolved = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
    assert resolved["noise"]["components"] == ["rademacher"]


def test_byte_determinism_across_runs(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run(["example", "1", "--out", str(out_a), "--seed", "3"]) == 0
    assert run(["example", "1", "--out", str(out_b), "--seed", "3"]) == 0
    names = sorted(p.name for p in out_a.iterdir())
    assert names == sorted(p.name for p in out_b.iterdir())
    for name in names:
        if name == "report.json":
            ra = json.loads((out_a / name).read_text())
            rb = json.loads((out_b / name).read_text())
            ra.pop("timings")
            rb.pop("timings")
            assert ra == rb
        else:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_rerun_with_emitted_resolved_config_reproduces(tmp_path):
    cfg = write_config(tmp_path, example1_external_config(tmp_path / "out"))
    assert run(["certify", "--config", cfg]) == 0
    resolved = tmp_path / "out" / "resolved_config.json"
    assert run(["certify", "--config", str(resolved),
                "--out", str(tmp_path / "out2")]) == 0
    a = (tmp_path / "out" / "certificates.json").read_bytes()
    b = (tmp_path / "out2" / "certificates.json").read_bytes()
    assert a == b


def test_threads_flag_does_not_change_results(tmp_path):
    cfg = {
        "seed": 5,
        "system": {"builtin": "example1"},
        "ensemble": {"horizon": 60, "count": 20, "gamma_sq": 0.08,
                     "disturbance": {"kind": "white"}},
        "output": {"dir": None, "formats": ["csv"]},
    }
    outs = []
    for i, threads in enumerate(("1", "4")):
        cfg["output"]["dir"] = str(tmp_path / f"out{i}")
        path = write_config(tmp_path, cfg, f"c{i}.json")
        assert run(["gain", "--config", path, "--threads", threads]) == 0
        outs.append(json.loads(
            (tmp_path / f"out{i}" / "gain_reports.json").read_text()))
    assert outs[0] == outs[1]


def test_config_hash_matches_resolved_config(tmp_path):
    cfg = write_config(tmp_path, example1_external_config(tmp_path / "out"))
    assert run(["certify", "--config", cfg]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    resolved = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
    assert report["config_hash"] == cli.config_hash(resolved)


def test_internal_certificate_via_cli(tmp_path):
    cfg = {
        "seed": 1,
        "system": {"builtin": "example1"},
        "storage": {"builtin": "example1", "p": 4.0},
        "certificate": {
            "kind": "internal",
            "c2": 4.0,
            "domain": {"lo": [-10.0], "hi": [10.0], "grid": 101},
            "scheme": {"mode": "closed-form"},
        },
        "output": {"dir": str(tmp_path / "out")},
    }
    assert run(["certify", "--config", write_config(tmp_path, cfg)]) == 0


def test_controller_certificate_via_cli(tmp_path):
    cfg = {
        "seed": 1,
        "system": {"builtin": "example2"},
        "storage": {"builtin": "example2"},
        "law": {"builtin": "example2"},
        "certificate": {
            "kind": "controller",
            "beta": (8.0 / 5.0) ** (1.0 / 3.0),
            "gamma": 0.75,
            "domain": {"lo": [-2.0, -2.0, -2.0], "hi": [2.0, 2.0, 2.0],
                       "grid": 3},
            "scheme": {"mode": "monte-carlo", "samples": 4000},
        },
        "output": {"dir": str(tmp_path / "out")},
    }
    assert run(["certify", "--config", write_config(tmp_path, cfg)]) == 0


def test_svg_output_deterministic(tmp_path):
    from sbrl.svg import line_plot
    xs = list(range(10))
    ys = list(np.sin(np.arange(10) / 3.0))
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    line_plot(a, [("s", xs, ys)], title="t")
    line_plot(b, [("s", xs, ys)], title="t")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().startswith("<svg")
