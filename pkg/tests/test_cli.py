import numpy as np
import pytest

from boltrom import config as cfgmod
from boltrom import io as bio
from boltrom.cli import (
    EXIT_INTERNAL, EXIT_OK, EXIT_PARTIAL, EXIT_VALIDATION, cmd_identify_gamma,
    cmd_identify_modal, cmd_simulate, cmd_synth, main,
)
from boltrom.joint_models import REF_CALIBRATION, REF_STIFFNESS, StiffnessModel

SMALL = """
seed = 3
[synth]
n_low = 4
n_loosening = 2
duration_low = 4.5
duration_loosening = 4.5
preload_min = 200.0
preload_max = 2000.0
[windows]
final = [2.0, 4.0]
"""


@pytest.fixture(scope="module")
def campaign(tmp_path_factory):
    root = tmp_path_factory.mktemp("campaign")
    (root / "job.toml").write_text(SMALL)
    cfg = cfgmod.load(root / "job.toml")
    cmd_synth(cfg, root / "data")
    return root, cfg


def modal_rows(path, n, warnings=""):
    t = np.geomspace(10.0, 3000.0, n)
    k = REF_STIFFNESS(t)
    rows = [(f"m{i}", t[i], 15.0, 0.02, k[i], 500.0 + t[i] / 10, warnings if i else "")
            for i in range(n)]
    return bio.write_rows(path, bio.MODAL_COLUMNS, rows)


class TestExitCodes:
    def test_config_defaults(self, capsys):
        assert main(["config", "--defaults"]) == EXIT_OK
        assert cfgmod.loads(capsys.readouterr().out) == cfgmod.JobConfig()

    def test_config_written(self, tmp_path):
        assert main(["config", "--seed", "9", "--out", str(tmp_path)]) == EXIT_OK
        assert cfgmod.load(tmp_path / "config.toml").seed == 9

    def test_synth_zero_cases(self, tmp_path, capsys):
        (tmp_path / "z.toml").write_text("[synth]\nn_low = 0\nn_loosening = 0\n")
        code = main(["synth", "--config", str(tmp_path / "z.toml"), "--out", str(tmp_path)])
        assert code == EXIT_VALIDATION
        assert "zero cases" in capsys.readouterr().err

    def test_incomplete_model_table(self, tmp_path, capsys):
        (tmp_path / "m.toml").write_text("[system.damping]\nc_D = 1.0\nc_I = 2.0\n")
        code = main(["synth", "--config", str(tmp_path / "m.toml"), "--out", str(tmp_path)])
        assert code == EXIT_VALIDATION
        assert "eta" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "none.toml")]) == EXIT_VALIDATION

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("case_id\nx\n")
        code = main(["identify-modal", str(tmp_path), "--out", str(tmp_path / "o")])
        assert code == EXIT_VALIDATION

    def test_fit_needs_input(self, tmp_path):
        assert main(["fit-models", "--out", str(tmp_path)]) == EXIT_VALIDATION

    def test_unexpected_error_is_internal(self, tmp_path, monkeypatch):
        import boltrom.cli as cli

        def boom(*a, **k):
            raise RuntimeError("bug")
        monkeypatch.setattr(cli, "cmd_synth", boom)
        assert main(["synth", "--out", str(tmp_path)]) == EXIT_INTERNAL


class TestFitModels:
    def test_negative_gamma_row(self, tmp_path, capsys):
        rows = [(f"g{i}", 100.0 * (i + 1), 1e6, 0.0, 10, "loosening", 99.0, -1.0, "ok")
                for i in range(5)]
        rows[2] = ("g2", 300.0, -5.0, 0.0, 10, "loosening", 99.0, -1.0, "ok")
        path = bio.write_rows(tmp_path / "gamma.csv", bio.GAMMA_COLUMNS, rows)
        code = main(["fit-models", "--gamma", str(path), "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == EXIT_VALIDATION
        assert "gamma.csv:4" in err and "g2" in err

    def test_non_loosening_rows_skipped(self, tmp_path):
        t = np.geomspace(10.0, 3000.0, 8)
        from boltrom.joint_models import REF_LOOSENING
        rows = [(f"g{i}", t[i], REF_LOOSENING(t[i]), 0.0, 10, "loosening", 0, 0, "")
                for i in range(8)]
        rows.append(("t", 50.0, -3.0, 0.0, 10, "tightening", 0, 0, ""))
        path = bio.write_rows(tmp_path / "gamma.csv", bio.GAMMA_COLUMNS, rows)
        assert main(["fit-models", "--gamma", str(path), "--out", str(tmp_path)]) == EXIT_OK
        fitted = cfgmod.load(tmp_path / "model.toml")
        assert fitted.system.loosening.gamma_d == pytest.approx(11.79, rel=1e-6)

    def test_keep_warnings(self, tmp_path, capsys):
        path = modal_rows(tmp_path / "modal.csv", 8, warnings="near frequency ceiling")
        code = main(["fit-models", "--modal", str(path), "--out", str(tmp_path)])
        assert code == EXIT_VALIDATION and "--keep-warnings" in capsys.readouterr().err
        code = main(["fit-models", "--modal", str(path), "--out", str(tmp_path),
                     "--keep-warnings"])
        assert code == EXIT_OK
        report = bio.read_rows(tmp_path / "fit_report.csv", ("model", "parameter", "value",
                                                              "r_squared", "n_points",
                                                              "rms_residual", "converged"))
        assert {r["n_points"] for r in report} == {"8"}

    def test_outputs(self, tmp_path):
        path = modal_rows(tmp_path / "modal.csv", 12)
        assert main(["fit-models", "--modal", str(path), "--out", str(tmp_path)]) == EXIT_OK
        fitted = cfgmod.load(tmp_path / "model.toml")
        assert isinstance(fitted.system.stiffness, StiffnessModel)
        assert fitted.system.stiffness.k_I == pytest.approx(9.763e5, rel=1e-6)
        curves = (tmp_path / "fit_curves.csv").read_text().splitlines()
        assert curves[0].startswith("tension_N,k_c_Npm,c_c_Nspm") and len(curves) == 201


class TestCalibrate:
    def write(self, tmp_path, t_strain, strain, t_force, force):
        s = bio.write_columns(tmp_path / "strain.csv", bio.CALIBRATION_COLUMNS, [t_strain, strain])
        f = bio.write_columns(tmp_path / "force.csv", bio.FORCE_COLUMNS, [t_force, force])
        return str(s), str(f)

    def test_recovers_polynomial_from_misaligned_records(self, tmp_path):
        t = np.linspace(0.0, 2.0, 2001)
        strain = 0.4 * np.exp(-((t - 1.0) / 0.3) ** 2)
        shift = 0.137
        s, f = self.write(tmp_path, t + shift, strain, t, REF_CALIBRATION(strain))
        assert main(["calibrate", s, f, "--out", str(tmp_path)]) == EXIT_OK
        cal = cfgmod.tomllib.loads((tmp_path / "calibration.toml").read_text())["calibration"]
        assert cal["offset_s"] == pytest.approx(shift, abs=1e-9)
        np.testing.assert_allclose(cal["coeffs"], [-575.63, 2363.7, 2718.7], rtol=1e-6)

    def test_flat_signal(self, tmp_path, capsys):
        t = np.linspace(0.0, 1.0, 11)
        s, f = self.write(tmp_path, t, np.zeros(11), t, np.ones(11))
        assert main(["calibrate", s, f, "--out", str(tmp_path)]) == EXIT_VALIDATION
        assert "flat" in capsys.readouterr().err


class TestCampaignCommands:
    def test_same_seed_same_bytes(self, tmp_path):
        (tmp_path / "n.toml").write_text(
            "seed = 5\n[noise]\nlevel = 0.02\n[synth]\nn_low = 2\nn_loosening = 0\n"
            "duration_low = 1.0\n")
        for d in ("a", "b"):
            assert main(["synth", "--config", str(tmp_path / "n.toml"),
                         "--out", str(tmp_path / d)]) == EXIT_OK
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_manifest_contents(self, campaign):
        root, _ = campaign
        entries = bio.read_manifest(root / "data")
        assert [e.test_type for e in entries] == ["coupled-low"] * 4 + ["loosening"] * 2
        assert [e.seed for e in entries] == list(range(3, 9))

    def test_identify_modal(self, campaign):
        root, cfg = campaign
        res = cmd_identify_modal(root / "data", cfg, root / "out")
        assert res.exit_code == EXIT_OK and len(res.data) == 4
        for row in res.data:
            assert 10.0 < row.f1 < 16.3
            assert row.k_c > 0 and row.c_c > 0

    def test_identify_gamma(self, campaign):
        root, cfg = campaign
        res = cmd_identify_gamma(root / "data", cfg, root / "out")
        assert res.exit_code == EXIT_OK
        rows = bio.read_rows(root / "out" / "gamma.csv", bio.GAMMA_COLUMNS)
        assert [r["status"] for r in rows] == ["loosening", "loosening"]
        truth = cfg.system.loosening
        for r in rows:
            assert float(r["gamma"]) == pytest.approx(truth(float(r["preload_N"])), rel=0.2)

    def test_corrupt_case_is_partial(self, campaign, tmp_path):
        root, cfg = campaign
        import shutil
        data = tmp_path / "data"
        shutil.copytree(root / "data", data)
        victim = bio.read_manifest(data)[-1]
        (data / victim.tension_file).write_text("time_s,tension_N\n0,1\n")
        res = cmd_identify_gamma(data, cfg, tmp_path / "out")
        assert res.exit_code == EXIT_PARTIAL
        errors = bio.read_rows(tmp_path / "out" / "errors.csv", ("case_id", "stage", "message"))
        assert [e["case_id"] for e in errors] == [victim.case_id]

    def test_empty_selection_writes_header(self, campaign, tmp_path):
        root, cfg = campaign
        import shutil
        data = tmp_path / "data"
        data.mkdir()
        entries = [e for e in bio.read_manifest(root / "data") if e.test_type != "loosening"]
        for e in entries:
            shutil.copy(root / "data" / e.fast_file, data)
            shutil.copy(root / "data" / e.tension_file, data)
        bio.write_manifest(data, entries)
        code = main(["identify-gamma", str(data), "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        assert (tmp_path / "out" / "gamma.csv").read_text() == ",".join(bio.GAMMA_COLUMNS) + "\n"

    def test_simulate_measured_case(self, campaign, tmp_path):
        root, cfg = campaign
        case_id = bio.read_manifest(root / "data")[-1].case_id
        res = cmd_simulate(cfg, tmp_path, root / "data", case_id)
        assert res.data["percent_error"] < 0.5
        assert (tmp_path / "overlay.csv").exists()

    def test_simulate_pulse(self, tmp_path):
        code = main(["simulate", "--preload", "1018", "--amplitude", "30", "--duration", "8.5",
                     "--out", str(tmp_path)])
        assert code == EXIT_OK
        report = dict((r["quantity"], float(r["value"])) for r in
                      bio.read_rows(tmp_path / "simulate_report.csv", ("quantity", "value")))
        assert abs(report["delta_N"]) < 1e-4

    def test_simulate_needs_inputs(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path)]) == EXIT_VALIDATION

    def test_simulate_too_short(self, tmp_path, capsys):
        code = main(["simulate", "--preload", "1018", "--amplitude", "30", "--duration", "2",
                     "--out", str(tmp_path)])
        assert code == EXIT_VALIDATION and "final window" in capsys.readouterr().err
