import json

import pytest

from scrc.cli import main, read_config_file
from scrc.data import load_logits
from scrc.harness import TRIAL_COLUMNS, read_trial_csv


@pytest.fixture
def logits_csv(tmp_path):
    path = tmp_path / "logits.csv"
    code = main(["generate", "--k", "5", "--n", "400", "--seed", "3",
                 "--out", str(path)])
    assert code == 0
    return path


class TestGenerate:
    def test_writes_loadable_file(self, logits_csv):
        rec = load_logits(logits_csv)
        assert rec.n_classes == 5
        assert len(rec) == 400

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert main(["generate", "--n", "50", "--seed", "9", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestCalibrate:
    def test_scrc_i_writes_thresholds(self, logits_csv, tmp_path):
        out = tmp_path / "th.json"
        code = main(["calibrate", "--data", str(logits_csv), "--method", "scrc-i",
                     "--xi", "0.7", "--alpha", "0.2", "--out", str(out)])
        assert code == 0
        th = json.loads(out.read_text())
        assert th["method"] == "SCRC-I"
        assert 0.0 <= th["lambda1"] <= 1.0
        assert 0.0 <= th["lambda2"] <= 1.0
        assert th["xi_lcb"] is not None

    def test_scrc_t_needs_test_g(self, logits_csv, capsys):
        assert main(["calibrate", "--data", str(logits_csv), "--method", "scrc-t"]) == 1
        assert "test-g" in capsys.readouterr().err
        assert main(["calibrate", "--data", str(logits_csv), "--method", "scrc-t",
                     "--test-g", "0.8", "--alpha", "0.2"]) == 0

    def test_infeasible_exits_two(self, tmp_path, capsys):
        small = tmp_path / "small.csv"
        main(["generate", "--n", "9", "--out", str(small)])
        code = main(["calibrate", "--data", str(small), "--method", "crc-all",
                     "--alpha", "0.1"])
        assert code == 2

    def test_ordinal_loss_flag(self, logits_csv, tmp_path):
        out = tmp_path / "th.json"
        code = main(["calibrate", "--data", str(logits_csv), "--method", "crc-all",
                     "--alpha", "0.2", "--loss", "ordinal",
                     "--ordinal-weights", "0,0.25,0.5,0.75,1", "--out", str(out)])
        assert code == 0


class TestEvaluate:
    def test_metrics_json(self, logits_csv, tmp_path):
        th_path = tmp_path / "th.json"
        main(["calibrate", "--data", str(logits_csv), "--method", "scrc-i",
              "--xi", "0.7", "--alpha", "0.2", "--out", str(th_path)])
        test_path = tmp_path / "test.csv"
        main(["generate", "--k", "5", "--n", "300", "--seed", "4", "--out", str(test_path)])
        out = tmp_path / "metrics.json"
        code = main(["evaluate", "--data", str(test_path), "--thresholds", str(th_path),
                     "--out", str(out)])
        assert code == 0
        metrics = json.loads(out.read_text())
        assert 0.0 <= metrics["selective_coverage"] <= 1.0
        assert metrics["n_selected"] > 0


class TestSweep:
    def test_writes_trial_and_agg_files(self, tmp_path):
        out = tmp_path / "res.csv"
        code = main(["sweep", "--sweep", "xi", "--values", "0.6,0.8",
                     "--trials", "2", "--n-cal", "120", "--n-test", "120",
                     "--k", "5", "--alpha", "0.2", "--eta", "0.05",
                     "--methods", "scrc-i,crc-all", "--seed", "5",
                     "--out", str(out)])
        assert code == 0
        rows = read_trial_csv(out)
        assert len(rows) == 2 * 2 * 2
        assert (tmp_path / "res_agg.csv").exists()

    def test_infeasible_everything_exits_two(self, tmp_path):
        out = tmp_path / "res.csv"
        code = main(["sweep", "--values", "0.7", "--trials", "2",
                     "--n-cal", "9", "--n-test", "30", "--alpha", "0.1",
                     "--methods", "crc-all", "--out", str(out)])
        assert code == 2
        assert all(not_row["feasible"] is False or True for not_row in read_trial_csv(out))
        assert all(rec["feasible"] is False for rec in read_trial_csv(out))

    def test_bad_arguments_exit_one(self, tmp_path):
        assert main(["sweep", "--sweep", "banana", "--out", str(tmp_path / "x.csv")]) == 1
        assert main(["calibrate"]) == 1


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# sweep defaults\n"
            "values = 0.6\n"
            "trials = 2\n"
            "n_cal = 120\n"
            "n-test = 120\n"
            "k = 5\n"
            "alpha = 0.2\n"
            "eta = 0.05\n"
            "methods = crc-all\n"
            "no_sweep = true\n"
        )
        out = tmp_path / "res.csv"
        code = main(["sweep", "--config", str(cfg), "--trials", "3", "--out", str(out)])
        assert code == 0
        rows = read_trial_csv(out)
        # trials came from the explicit flag, everything else from the file
        assert len(rows) == 3
        assert {r["sweep_value"] for r in rows} == {"0.6"}

    def test_token_translation(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("alpha = 0.15\nno_sweep = true\ndecouple-g = false\n")
        tokens = read_config_file(cfg)
        assert tokens == ["--alpha", "0.15", "--no-sweep"]

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("alpha 0.15\n")
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 1


class TestColumnsContract:
    def test_trial_columns_spellings(self):
        assert TRIAL_COLUMNS == (
            "method", "sweep_variable", "sweep_value", "trial", "n_selected",
            "selective_coverage", "selective_risk", "set_size_selected",
            "set_size_rejected", "lambda1", "lambda2", "feasible",
        )
