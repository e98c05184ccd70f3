import os
import subprocess
import sys

import numpy as np
import pytest

from slicereg.cli import main
from slicereg.imgio import read_imv, write_imv
from slicereg.report import load_result
from slicereg.similarity import read_fiducials
from slicereg.synth import make_volume

SMALL_SYNTH = ["--dims", "48,48,48", "--spacing", "2", "--macro-blobs", "10",
               "--micro-blobs", "400"]
FAST_CFG = ("working_spacing = 2.0\ninner_evals_init = 30\ninner_evals_refine = 25\n"
            "inner_evals_full = 60\nrefine_max_evals = 50\noop_iterations = 30\n"
            "oop_restarts = 2\n")


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("case")
    assert run_cli("synth", "--seed", 4, "--out-dir", d, *SMALL_SYNTH) == 0
    return d


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.txt"
    path.write_text(FAST_CFG)
    return path


@pytest.fixture(scope="module")
def registered_dir(tmp_path_factory, case_dir, fast_config):
    out = tmp_path_factory.mktemp("reg")
    code = run_cli("register", "--ct", case_dir / "volume.imv",
                   "--histology", case_dir / "histology.imv",
                   "--config", fast_config, "--init", "intensity",
                   "--seed", 2, "--out-dir", out)
    assert code == 0
    return out


class TestSynth:
    def test_outputs_exist(self, case_dir):
        for name in ("volume.imv", "histology.imv", "fiducials_2d.csv",
                     "fiducials_3d.csv", "ground_truth.txt"):
            assert (case_dir / name).exists()

    def test_byte_deterministic(self, tmp_path, case_dir):
        other = tmp_path / "case2"
        other.mkdir()
        assert run_cli("synth", "--seed", 4, "--out-dir", other, *SMALL_SYNTH) == 0
        for name in ("volume.imv", "histology.imv", "fiducials_2d.csv",
                     "fiducials_3d.csv", "ground_truth.txt"):
            assert (case_dir / name).read_bytes() == (other / name).read_bytes()

    def test_missing_parent_exits_2(self, tmp_path):
        assert run_cli("synth", "--seed", 1,
                       "--out-dir", tmp_path / "no" / "such" / "dir") == 2

    def test_truth_evaluates_to_zero_fre(self, case_dir, capsys):
        code = run_cli("evaluate", "--result", case_dir / "ground_truth.txt",
                       "--fiducials-2d", case_dir / "fiducials_2d.csv",
                       "--fiducials-3d", case_dir / "fiducials_3d.csv")
        assert code == 0
        out = capsys.readouterr().out
        fre_line = [l for l in out.splitlines() if l.startswith("FRE_um")][0]
        assert float(fre_line.split("=")[1]) <= 1e-6


class TestRegister:
    def test_outputs(self, registered_dir):
        for name in ("result.txt", "timings.txt", "registered_slice.imv",
                     "extracted_slice.imv", "overlay.imv", "overlay.pgm"):
            assert (registered_dir / name).exists()

    def test_report_byte_deterministic(self, tmp_path, case_dir, fast_config,
                                       registered_dir):
        out2 = tmp_path / "reg2"
        code = run_cli("register", "--ct", case_dir / "volume.imv",
                       "--histology", case_dir / "histology.imv",
                       "--config", fast_config, "--init", "intensity",
                       "--seed", 2, "--out-dir", out2)
        assert code == 0
        assert (registered_dir / "result.txt").read_bytes() == \
            (out2 / "result.txt").read_bytes()

    def test_disa_without_weights_exits_3(self, case_dir, tmp_path):
        code = run_cli("register", "--ct", case_dir / "volume.imv",
                       "--histology", case_dir / "histology.imv",
                       "--init", "disa", "--out-dir", tmp_path / "x")
        assert code == 3

    def test_missing_input_exits_2(self, tmp_path, case_dir):
        code = run_cli("register", "--ct", tmp_path / "missing.imv",
                       "--histology", case_dir / "histology.imv",
                       "--out-dir", tmp_path / "y")
        assert code == 2

    def test_bad_config_key_exits_3(self, tmp_path, case_dir):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("frobnicate = 7\n")
        code = run_cli("register", "--ct", case_dir / "volume.imv",
                       "--histology", case_dir / "histology.imv",
                       "--config", cfg, "--out-dir", tmp_path / "z")
        assert code == 3

    def test_degenerate_inputs_exit_5(self, tmp_path):
        flat = make_volume(0, (48, 48, 48), (2.0, 2.0, 2.0), n_macro=0, n_micro=0)
        write_imv(tmp_path / "flat.imv", flat)
        from slicereg.imgcore import Image2D
        write_imv(tmp_path / "hist.imv", Image2D(np.zeros((16, 16)), (2.0, 2.0)))
        code = run_cli("register", "--ct", tmp_path / "flat.imv",
                       "--histology", tmp_path / "hist.imv",
                       "--out-dir", tmp_path / "out")
        assert code == 5


class TestEvaluate:
    def test_fre_matches_manual_mapping(self, registered_dir, case_dir, capsys):
        code = run_cli("evaluate", "--result", registered_dir / "result.txt",
                       "--fiducials-2d", case_dir / "fiducials_2d.csv",
                       "--fiducials-3d", case_dir / "fiducials_3d.csv")
        assert code == 0
        reported = float([l for l in capsys.readouterr().out.splitlines()
                          if l.startswith("FRE_um")][0].split("=")[1])
        # independent point-by-point mapping
        rf = load_result(registered_dir / "result.txt")
        _, pts2 = read_fiducials(case_dir / "fiducials_2d.csv")
        _, pts3 = read_fiducials(case_dir / "fiducials_3d.csv")
        dists = []
        for p2, p3 in zip(pts2, pts3):
            mapped = rf.map_to_volume(p2[None, :])[0]
            dists.append(float(np.linalg.norm(mapped - p3)))
        assert reported == pytest.approx(np.mean(dists), abs=1e-9)

    def test_unmatched_ids_exit_2(self, registered_dir, case_dir, tmp_path, capsys):
        bad = tmp_path / "fid3.csv"
        lines = (case_dir / "fiducials_3d.csv").read_text().splitlines()
        lines[1] = lines[1].replace("F00", "XX")
        bad.write_text("\n".join(lines) + "\n")
        code = run_cli("evaluate", "--result", registered_dir / "result.txt",
                       "--fiducials-2d", case_dir / "fiducials_2d.csv",
                       "--fiducials-3d", bad)
        assert code == 2


class TestFeatures:
    def test_feature_file_shape(self, tmp_path, rng):
        from slicereg.disa import make_default_net, write_weights
        from slicereg.imgcore import Image2D
        net = make_default_net(3)
        weights = tmp_path / "w.dsw"
        write_weights(weights, net)
        img = Image2D(rng.standard_normal((64, 64)), (10.4, 10.4))
        write_imv(tmp_path / "img.imv", img)
        code = run_cli("features", "--input", tmp_path / "img.imv",
                       "--weights", weights, "--out", tmp_path / "feat.imv")
        assert code == 0
        data, spacing = read_imv(tmp_path / "feat.imv")
        assert data.shape == (1, 16, 16, 16)

    def test_feature_roundtrip_bits(self, tmp_path, rng):
        from slicereg.disa import make_default_net, write_weights
        net = make_default_net(3)
        weights = tmp_path / "w.dsw"
        write_weights(weights, net)
        vol = make_volume(2, (48, 48, 32), (2.0, 2.0, 2.0), n_macro=6, n_micro=100)
        write_imv(tmp_path / "vol.imv", vol)
        assert run_cli("features", "--input", tmp_path / "vol.imv",
                       "--weights", weights, "--out", tmp_path / "f1.imv") == 0
        assert run_cli("features", "--input", tmp_path / "vol.imv",
                       "--weights", weights, "--out", tmp_path / "f2.imv") == 0
        assert (tmp_path / "f1.imv").read_bytes() == (tmp_path / "f2.imv").read_bytes()

    def test_corrupt_weights_exit_4(self, tmp_path, rng):
        weights = tmp_path / "bad.dsw"
        weights.write_bytes(b"DISAW001" + b"\x00" * 16)
        from slicereg.imgcore import Image2D
        write_imv(tmp_path / "img.imv", Image2D(rng.random((16, 16)), (1.0, 1.0)))
        code = run_cli("features", "--input", tmp_path / "img.imv",
                       "--weights", weights, "--out", tmp_path / "f.imv")
        assert code == 4


class TestCompareInits:
    def test_comparison_table(self, tmp_path, case_dir, fast_config, capsys):
        gt = load_result(case_dir / "ground_truth.txt")
        from slicereg.geometry import plane_z_at
        # manual pose through the original-frame pivot of the truth
        out = tmp_path / "cmp"
        code = run_cli("compare-inits", "--ct", case_dir / "volume.imv",
                       "--histology", case_dir / "histology.imv",
                       "--config", fast_config, "--seed", 2,
                       "--manual-pose",
                       f"{gt.pose.tz},{gt.pose.rx},{gt.pose.ry}",
                       "--fiducials-2d", case_dir / "fiducials_2d.csv",
                       "--fiducials-3d", case_dir / "fiducials_3d.csv",
                       "--out-dir", out)
        assert code == 0
        table = (out / "comparison.txt").read_text().splitlines()
        assert table[0].startswith("init")
        rows = [l for l in table[2:] if l.strip()]
        assert len(rows) == 2  # intensity + manual (no weights given)
        for row in rows:
            parts = row.split()
            lncc, lc2v = float(parts[1]), float(parts[2])
            assert -1.0 <= lncc <= 1.0 and 0.0 <= lc2v <= 1.0

    def test_rows_match_single_runs(self, tmp_path, case_dir, fast_config,
                                    registered_dir):
        out = tmp_path / "cmp2"
        code = run_cli("compare-inits", "--ct", case_dir / "volume.imv",
                       "--histology", case_dir / "histology.imv",
                       "--config", fast_config, "--seed", 2, "--out-dir", out)
        assert code == 0
        single = load_result(registered_dir / "result.txt")
        batch = load_result(out / "init_intensity" / "result.txt")
        assert batch.scores == single.scores
