"""Command-line stages, exit codes and error files."""

import numpy as np
import pytest

from coagflux.cli import alignment_frames, build_parser, exit_code_for, main
from coagflux.config import field_names
from coagflux.errors import ConfigError, QuadratureError, SolverError
from coagflux.export import read_csv, read_json


class TestParser:
    def test_every_field_has_a_flag(self):
        parser = build_parser()
        for name in field_names():
            args = parser.parse_args(["solve", f"--{name}", "1"])
            assert getattr(args, name) == "1"

    def test_hyphenated_aliases(self):
        args = build_parser().parse_args(["construct", "--k-scan-lo", "16"])
        assert args.k_scan_lo == "16"

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestExitCodes:
    def test_quadrature_failure_takes_the_stage_code(self):
        err = QuadratureError("panel budget exhausted")
        assert exit_code_for("construct", err) == 2
        assert exit_code_for("solve", err) == 3
        assert exit_code_for("verify", err) == 4

    def test_class_codes(self):
        assert exit_code_for("solve", SolverError("x")) == 3
        assert exit_code_for("verify", ConfigError("x")) == 1

    def test_bad_config_is_usage_error(self, tmp_path):
        assert main(["solve", "--N", "4", "--out_dir", str(tmp_path)]) == 1

    @pytest.mark.parametrize("stage", ["solve", "verify"])
    def test_missing_inputs(self, tmp_path, stage):
        assert main([stage, "--out_dir", str(tmp_path)]) == 1
        err = read_json(tmp_path / "error.json")
        assert err["stage"] == stage
        assert err["error"] == "ConfigError"

    def test_exponents_outside_window(self, tmp_path):
        code = main(["construct", "--gamma", "0.5", "--p", "0.25", "--out_dir", str(tmp_path)])
        assert code == 2
        err = read_json(tmp_path / "error.json")
        assert err["stage"] == "construct"
        assert err["exit_code"] == 2
        assert "no constant-flux regime" in err["message"]
        assert not (tmp_path / "w0_manifest.json").exists()


class TestFigdata:
    def test_alignment_of_equal_points(self):
        align, vectors = alignment_frames(1.0, 1.0, np.linspace(19.0, 20.0, 5))
        assert np.all(align["Re"] > 0)
        assert np.max(np.abs(align["Im"])) < 1e-12 * np.max(align["Re"])
        np.testing.assert_allclose(vectors["theta_a"], vectors["theta_b"])

    def test_writes_the_alignment_window(self, tmp_path):
        assert main(["figdata", "--out_dir", str(tmp_path)]) == 0
        align = read_csv(tmp_path / "G_align.csv")
        vectors = read_csv(tmp_path / "G_vectors.csv")
        assert len(align) == 512 and len(vectors) == 512
        assert list(vectors.columns) == ["k", "theta_a", "theta_b", "dtheta"]
        im = align["Im"].to_numpy()
        flips = np.flatnonzero(np.sign(im[1:]) != np.sign(im[:-1]))
        assert flips.size == 1
        assert align["Re"].iloc[flips[0]] < 0
        assert (tmp_path / "G_align.csv").read_text(encoding="utf-8").startswith("# coagflux ")
