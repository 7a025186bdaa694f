import json

import pytest

from qdcsim import cli
from qdcsim.cli import ConfigError, build_round_config, config_to_dict, load_config


BASE_DOC = {
    "params": {"g": 1.0, "Omega": 1.0, "Delta": 1.0, "k": 0.2, "gamma": 0.0},
    "round": {"t_window": 0.5, "seed": 42},
    "detector": {"efficiency": 1.0, "dark_prob": 0.0},
    "sweep": {"t_windows": [0.2, 0.5], "rounds": 1500},
    "security": {"rounds": 1500},
}


@pytest.fixture()
def config_path(tmp_path):
    p = tmp_path / "base.json"
    p.write_text(json.dumps(BASE_DOC))
    return str(p)


def run_cli(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfigParsing:
    def test_roundtrip(self, config_path):
        cfg = build_round_config(load_config(config_path))
        cfg2 = build_round_config(config_to_dict(cfg))
        assert cfg2 == cfg

    def test_missing_field_named(self):
        doc = {"params": {"g": 1.0, "Omega": 1.0}, "round": {"t_window": 0.5}}
        with pytest.raises(ConfigError, match="params.Delta"):
            build_round_config(doc)

    def test_missing_window_named(self):
        doc = {"params": {"g": 1.0, "Omega": 1.0, "Delta": 1.0}}
        with pytest.raises(ConfigError, match="round.t_window"):
            build_round_config(doc)

    def test_invalid_value_reported(self):
        doc = json.loads(json.dumps(BASE_DOC))
        doc["detector"]["efficiency"] = 1.5
        with pytest.raises(ConfigError, match="detector"):
            build_round_config(doc)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.json")


class TestRunCommand:
    def test_single_round_json(self, config_path, capsys):
        code, out, _ = run_cli(
            ["run", "--config", config_path, "--message", "X", "--seed", "7"], capsys
        )
        assert code == 0
        doc = json.loads(out.strip())
        assert doc["mode"] == "encode" and doc["sent"] == "X"
        assert set(doc) >= {"clicks", "receiver_bits", "decoded"}

    def test_forced_check(self, config_path, capsys):
        code, out, _ = run_cli(
            ["run", "--config", config_path, "--p-check", "1.0"], capsys
        )
        assert code == 0
        assert json.loads(out.strip())["mode"] == "check"

    def test_missing_field_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"params": {"g": 1.0, "Omega": 1.0}, "round": {"t_window": 0.5}}))
        code, _, err = run_cli(["run", "--config", str(bad)], capsys)
        assert code == 2
        assert "params.Delta" in err


class TestBatchCommand:
    def test_summary_and_files(self, config_path, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code, out, _ = run_cli(
            ["batch", "--config", config_path, "--rounds", "800",
             "--out", str(out_dir), "--round-log"],
            capsys,
        )
        assert code == 0
        summary = json.loads(out.strip())
        assert summary["n_rounds"] == 800
        assert "wall_time_s" in summary
        on_disk = json.loads((out_dir / "batch_summary.json").read_text())
        assert "wall_time_s" not in on_disk  # deterministic file contents
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert "batch_summary.json" in manifest["files"]
        assert "rounds.jsonl" in manifest["files"]
        lines = (out_dir / "rounds.jsonl").read_text().splitlines()
        assert len(lines) == 800

    def test_byte_identical_across_threads(self, config_path, tmp_path, capsys):
        d1, d8 = tmp_path / "t1", tmp_path / "t8"
        for threads, dest in (("1", d1), ("8", d8)):
            code, _, _ = run_cli(
                ["batch", "--config", config_path, "--rounds", "600",
                 "--threads", threads, "--out", str(dest), "--round-log"],
                capsys,
            )
            assert code == 0
        assert (d1 / "batch_summary.json").read_bytes() == (d8 / "batch_summary.json").read_bytes()
        assert (d1 / "rounds.jsonl").read_bytes() == (d8 / "rounds.jsonl").read_bytes()

    def test_config_echo_reparses(self, config_path, capsys):
        code, out, _ = run_cli(["batch", "--config", config_path, "--rounds", "50"], capsys)
        assert code == 0
        echo = json.loads(out.strip())["config"]
        cfg = build_round_config(echo)
        assert cfg == build_round_config(load_config(config_path))

    def test_rejects_bad_rounds(self, config_path, capsys):
        code, _, _ = run_cli(["batch", "--config", config_path, "--rounds", "0"], capsys)
        assert code == 2


class TestSweepCommand:
    def test_csv_and_agreement(self, config_path, tmp_path, capsys):
        out_dir = tmp_path / "sw"
        code, out, _ = run_cli(
            ["sweep", "--config", config_path, "--out", str(out_dir)], capsys
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "t_window,formula_survival,formula_integrated,mc_estimate,mc_stderr"
        assert len(lines) == 3
        for line in lines[1:]:
            t_w, f_surv, f_int, mc, se = map(float, line.split(","))
            assert abs(mc - f_int) < 3 * se + 1e-9
        assert (out_dir / "sweep.csv").read_text() == out

    def test_identical_seed_identical_csv(self, config_path, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            dest = tmp_path / name
            code, _, _ = run_cli(
                ["sweep", "--config", config_path, "--out", str(dest), "--seed", "5"],
                capsys,
            )
            assert code == 0
            outs.append((dest / "sweep.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_bad_grid(self, tmp_path, capsys):
        doc = json.loads(json.dumps(BASE_DOC))
        doc["sweep"]["t_windows"] = []
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(doc))
        code, _, _ = run_cli(["sweep", "--config", str(p)], capsys)
        assert code == 2


class TestSecurityCommand:
    def test_report(self, config_path, capsys):
        code, out, _ = run_cli(
            ["security", "--config", config_path, "--rounds", "1500", "--seed", "1"],
            capsys,
        )
        assert code == 0
        doc = json.loads(out.strip())
        sec = doc["security"]
        assert set(sec) >= {"bob_alone", "charlie_alone", "collaboration",
                            "composite_bob", "eve_detection_rate"}
        assert abs(sec["composite_bob"] - (1 - sec["charlie_alone"])) < 1e-12

    def test_eve_flag(self, config_path, capsys):
        code, out, _ = run_cli(
            ["security", "--config", config_path, "--rounds", "1000",
             "--eve", "intercept-resend-atom-z"],
            capsys,
        )
        assert code == 0
        sec = json.loads(out.strip())["security"]
        assert sec["eve_strategy"] == "intercept_resend_atom_z"
        assert abs(sec["eve_detection_rate"] - 0.5) < 0.1

    def test_unknown_eve(self, config_path, capsys):
        code, _, _ = run_cli(
            ["security", "--config", config_path, "--eve", "teleport"], capsys
        )
        assert code == 2


class TestFeasibilityCommand:
    def test_paper_constants(self, capsys):
        code, out, _ = run_cli(["feasibility", "--paper-constants"], capsys)
        assert code == 0
        json_line = out.strip().splitlines()[-1]
        doc = json.loads(json_line)
        assert all(r["passed"] for r in doc["regime"])
        assert doc["t1_discrepancy_flagged"] is True

    def test_with_config_params(self, config_path, capsys):
        code, out, _ = run_cli(["feasibility", "--config", config_path], capsys)
        assert code == 0


class TestDecodeTableCommand:
    def test_table_output(self, config_path, capsys):
        code, out, _ = run_cli(["decode-table", "--config", config_path], capsys)
        assert code == 0
        doc = json.loads(out.strip())
        entries = {tuple(e["key"]): e["message"] for e in doc["table"]}
        assert entries[("D+", "e")] == "X"
        assert entries[("D-", "e")] == "iY"
        assert entries[("none", "e")] == "abort"
