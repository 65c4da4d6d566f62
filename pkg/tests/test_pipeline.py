"""End-to-end runs of the command-line pipeline (slow)."""

import numpy as np
import pytest

from coagflux.cli import main
from coagflux.export import read_csv, read_json

pytestmark = pytest.mark.slow

OUTPUTS = [
    "w0_manifest.json", "phi.csv", "w0.csv", "psi.csv",
    "solution.json", "H.csv", "f_vs_powerlaw.csv",
    "verify.json", "B_HH.csv", "J.csv",
    "G_align.csv", "G_vectors.csv",
]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["all", "--out_dir", str(out)]) == 0
    return out


def test_all_stages_write_their_outputs(run_dir):
    for name in OUTPUTS:
        assert (run_dir / name).exists(), name
    assert not (run_dir / "error.json").exists()
    h = read_json(run_dir / "solution.json")["config_hash"]
    for name in OUTPUTS:
        if name.endswith(".csv"):
            first = (run_dir / name).read_text(encoding="utf-8").splitlines()[0]
            assert first.endswith(f"config={h}")


def test_verification_passed(run_dir):
    report = read_json(run_dir / "verify.json")
    assert report["pass"] is True
    assert report["max_rel_dev_X"] <= 1e-4


def test_manifest_is_deterministic(run_dir, tmp_path):
    assert main(["construct", "--out_dir", str(tmp_path)]) == 0
    again = (tmp_path / "w0_manifest.json").read_bytes()
    assert again == (run_dir / "w0_manifest.json").read_bytes()


def test_zero_amplitude_gives_the_power_law(run_dir, tmp_path):
    (tmp_path / "w0_manifest.json").write_bytes((run_dir / "w0_manifest.json").read_bytes())
    assert main(["solve", "--s", "0", "--out_dir", str(tmp_path)]) == 0
    H = read_csv(tmp_path / "H.csv")["H"].to_numpy()
    assert np.ptp(H) < 1e-14 * H[0]


def test_second_regime(tmp_path):
    assert main(["all", "--gamma", "0.2", "--p", "0.1", "--out_dir", str(tmp_path)]) == 0
    manifest = read_json(tmp_path / "w0_manifest.json")
    assert manifest["params"] == {"gamma": 0.2, "p": 0.1}
    assert read_json(tmp_path / "verify.json")["pass"] is True
