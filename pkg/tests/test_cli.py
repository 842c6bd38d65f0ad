import json
import math

import pytest

from splitalloc.cli import parse_and_dispatch


def run_cli(argv, capsys):
    code = parse_and_dispatch(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestEnv:
    def test_counterexample_instance(self, capsys):
        code, out, _ = run_cli(["env", "--d", "6", "--s", "2", "--m", "4"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["q"] == "14/15"
        assert doc["cstar_kernel"] == "3/7"
        assert doc["passes"] is True

    def test_gamma_form(self, capsys):
        # ceil(0.66 * 6) = 4, matching the --m 4 instance
        code, out, _ = run_cli(["env", "--d", "6", "--s", "2", "--gamma", "0.66"], capsys)
        assert code == 0
        assert json.loads(out)["q"] == "14/15"


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        assert parse_and_dispatch(["bogus"]) == 2

    def test_unknown_flag(self, capsys):
        assert parse_and_dispatch(["env", "--d", "6", "--s", "2", "--m", "4", "--nope"]) == 2

    def test_missing_required(self, capsys):
        assert parse_and_dispatch(["env", "--d", "6"]) == 2


class TestConfigFile:
    def test_config_supplies_model(self, tmp_path, capsys):
        cfg = tmp_path / "model.json"
        cfg.write_text(json.dumps({"d": 6, "s": 2, "m": 4}))
        code, out, _ = run_cli(["env", "--config", str(cfg)], capsys)
        assert code == 0
        assert json.loads(out)["q"] == "14/15"

    def test_explicit_flag_overrides_config(self, tmp_path, capsys):
        cfg = tmp_path / "model.json"
        cfg.write_text(json.dumps({"d": 6, "s": 2, "m": 1}))
        code, out, _ = run_cli(["env", "--config", str(cfg), "--m", "4"], capsys)
        assert code == 0
        assert json.loads(out)["q"] == "14/15"

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "model.json"
        cfg.write_text(json.dumps({"d": 6, "s": 2, "m": 4, "bogus": 1}))
        code, _, err = run_cli(["env", "--config", str(cfg)], capsys)
        assert code == 2
        assert "unknown config keys" in err

    def test_runtime_error_is_one(self, capsys):
        # s > d fails model validation after parsing
        code, _, err = run_cli(["env", "--d", "2", "--s", "5", "--m", "2"], capsys)
        assert code == 1
        assert "error" in err


class TestDeterminism:
    @pytest.mark.parametrize(
        "argv",
        [
            ["simulate", "--d", "6", "--s", "2", "--m", "4", "--ell", "40", "--seed", "3"],
            ["drift", "--d", "6", "--s", "2", "--m", "4", "--reps", "200", "--horizon", "10", "--seed", "1"],
            ["risk", "--d", "6", "--s", "2", "--m", "4", "--reps", "2000", "--ell", "2", "--seed", "5"],
        ],
    )
    def test_identical_output_for_identical_seed(self, argv, capsys):
        code1, out1, _ = run_cli(argv, capsys)
        code2, out2, _ = run_cli(argv, capsys)
        assert code1 == code2 == 0
        assert out1 == out2


class TestCsvOutputs:
    def test_simulate_header_and_rows(self, capsys):
        code, out, _ = run_cli(
            ["simulate", "--d", "5", "--s", "2", "--m", "3", "--ell", "7", "--policy", "mix:0.5"], capsys
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("t,action,informative,M,count_0")
        assert len(lines) == 8

    def test_expmoment_header(self, capsys):
        code, out, _ = run_cli(
            [
                "expmoment", "--d", "6", "--s", "2", "--m", "4", "--eta", "0.5",
                "--n-grid", "5,10", "--reps", "300",
            ],
            capsys,
        )
        assert code == 0
        assert out.splitlines()[0] == "n,estimate,se"

    def test_allocation_totals(self, capsys):
        code, out, _ = run_cli(
            ["allocation", "--d", "6", "--s", "2", "--m", "4", "--t", "2000", "--runs", "2"], capsys
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "coordinate,empirical,target"
        empirical = sum(float(line.split(",")[1]) for line in lines[1:])
        assert empirical == pytest.approx(1.0, abs=1e-9)


class TestBellmanCli:
    def test_counterexample_document(self, capsys):
        code, out, _ = run_cli(["bellman", "counterexample", "--B", "15"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["law"]["(1, 1)"] == "28/45"
        assert doc["gamma_gap"] == "-1/720"
        assert doc["delta_j"] == doc["delta_j_direct"] == "77/168750000"
        assert doc["epsilon_critical"] == "5/588"
        assert len(doc["violations"]) == 2

    def test_law_defaults(self, capsys):
        code, out, _ = run_cli(["bellman", "law"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["exact"] and doc["reduced"]
        assert doc["mass"]["(0, 0)"] == "1/225"

    def test_certify_boundary(self, capsys):
        code, out, _ = run_cli(["bellman", "certify", "--B", "14"], capsys)
        assert json.loads(out)["violations"] == []
        code, out, _ = run_cli(["bellman", "certify", "--B", "15"], capsys)
        assert len(json.loads(out)["violations"]) == 2

    def test_search(self, capsys):
        code, out, _ = run_cli(["bellman", "search", "--B", "1", "--d", "3", "--s", "2", "--m", "2"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["best_value"] == "11/16"
        assert doc["heuristic"] is False


class TestPoissonCli:
    def test_f_value(self, capsys):
        code, out, _ = run_cli(["poisson", "--F", "3,0.25,0.4"], capsys)
        assert code == 0
        assert json.loads(out)["F"] == pytest.approx(0.604864)

    def test_identities(self, capsys):
        code, out, _ = run_cli(["poisson", "--check-identities"], capsys)
        doc = json.loads(out)
        assert doc["identities"]["max_binomial_worst"] < 1e-10
        assert doc["identities"]["pair_agreement_worst"] < 1e-8

    def test_nothing_requested(self, capsys):
        assert parse_and_dispatch(["poisson"]) == 1


class TestForestCli:
    def test_heatmap_csv(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "d": 6,
                    "s": 2,
                    "snr": 2.0,
                    "gamma_grid": [0.5, 1.0],
                    "w_grid": [0, "inf"],
                    "reps": 2,
                    "n0": 60,
                    "ell": 2,
                    "min_leaf": 4,
                    "B": 4,
                    "n_test": 15,
                }
            )
        )
        out_file = tmp_path / "grid.csv"
        code = parse_and_dispatch(["forest", "heatmap", "--config", str(cfg), "--out", str(out_file)])
        assert code == 0
        lines = out_file.read_text().strip().splitlines()
        assert lines[0] == "gamma,w,snr,rep_count,mean_mse,se"
        assert len(lines) == 5

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"d": 6, "s": 2, "lle": 3}))
        code, _, err = run_cli(["forest", "heatmap", "--config", str(cfg)], capsys)
        assert code == 1
        assert "unknown config keys" in err

    def test_heatmap_byte_identical_reruns(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {"d": 5, "s": 2, "sigma0": 0.5, "gamma_grid": [0.6], "w_grid": [0, 1],
                 "reps": 2, "n0": 50, "ell": 2, "min_leaf": 4, "B": 3, "n_test": 10}
            )
        )
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert parse_and_dispatch(["forest", "heatmap", "--config", str(cfg), "--out", str(out1)]) == 0
        assert parse_and_dispatch(["forest", "heatmap", "--config", str(cfg), "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_key_value_config_format(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(
            "d = 6\ns = 2\nsigma0 = 0.5\ngamma_grid = [1.0]\nw_grid = [0]\n"
            "reps = 1\nn0 = 50\nell = 2\nmin_leaf = 4\nB = 2\nn_test = 10\n"
        )
        code, out, _ = run_cli(["forest", "heatmap", "--config", str(cfg)], capsys)
        assert code == 0
        assert out.splitlines()[0] == "gamma,w,snr,rep_count,mean_mse,se"
