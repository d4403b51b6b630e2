import hashlib
import json
from pathlib import Path

import pytest

from heatlift.cli import main, resolve_config, run


def file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


SMALL_SPECTRAL = [
    "--set",
    "n_modes=16",
    "--set",
    "n_time=4",
    "--set",
    "grid_level=4",
]


class TestResolveConfig:
    def test_unknown_experiment(self):
        with pytest.raises(ValueError, match="unknown experiment"):
            resolve_config("frobnicate", {}, {})

    def test_defaults_and_overrides(self):
        config = resolve_config(
            "cov-check", {"seed": 3}, {"seed": None, "threads": 2, "set": ["n_s=7"]}
        )
        assert config["seed"] == 3
        assert config["threads"] == 2
        assert config["params"]["n_s"] == 7
        assert config["spectral"]["n_modes"] == 256

    def test_manifest_feedback(self):
        inner = resolve_config("schilder", {}, {})
        wrapped = {"resolved_config": inner}
        again = resolve_config("schilder", wrapped, {})
        assert again == inner


class TestExitCodes:
    def test_cov_check_succeeds(self, tmp_path, capsys):
        code = main(["cov-check", "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "cov_check.json").read_text())
        assert report["passed"]
        assert report["max_abs_discrepancy"] <= 1e-8

    def test_infeasible_converge_parameters_exit_2(self, tmp_path, capsys):
        code = main(
            [
                "converge",
                "--out",
                str(tmp_path),
                "--set",
                "alpha=0.4",
                "--set",
                "beta=0.1",
                "--set",
                "m=30",
                "--set",
                'kinds=["besov"]',
            ]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "4*beta < 1 - 2*alpha" in err

    def test_unknown_experiment_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_set_syntax_exit_2(self, tmp_path):
        code = main(["schilder", "--out", str(tmp_path), "--set", "oops"])
        assert code == 2


class TestDeterminism:
    def test_sample_reruns_bit_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        argv = ["sample", "--seed", "7"] + SMALL_SPECTRAL
        assert main(argv + ["--out", str(out1)]) == 0
        assert main(argv + ["--out", str(out2)]) == 0
        for name in ("field.csv", "field.bin", "lift.bin"):
            assert file_hash(out1 / name) == file_hash(out2 / name)

    def test_rerun_from_manifest_reproduces_outputs(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        argv = [
            "converge",
            "--seed",
            "5",
            "--set",
            "k_min=2",
            "--set",
            "k_max=3",
            "--set",
            "replicas=5",
            "--set",
            "n_modes=16",
            "--set",
            "n_time=4",
            "--set",
            "grid_level=4",
            "--set",
            "dim=2",
        ]
        assert main(argv + ["--out", str(out1)]) == 0
        manifest = json.loads((out1 / "manifest.json").read_text())
        assert (
            main(
                [
                    "converge",
                    "--config",
                    str(out1 / "manifest.json"),
                    "--out",
                    str(out2),
                ]
            )
            == 0
        )
        manifest2 = json.loads((out2 / "manifest.json").read_text())
        assert manifest["config_hash"] == manifest2["config_hash"]
        assert manifest["outputs"] == manifest2["outputs"]

    def test_manifest_records_output_hashes(self, tmp_path):
        out = tmp_path / "run"
        assert main(["schilder", "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        for name, digest in manifest["outputs"].items():
            assert file_hash(out / name) == digest
        assert manifest["config_hash"]
        assert manifest["threads"] == 1


class TestExperiments:
    def test_schilder_outputs(self, tmp_path):
        assert main(["schilder", "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "schilder.json").read_text())
        assert payload["limit"] == pytest.approx(-0.5, rel=1e-9)
        csv = (tmp_path / "schilder.csv").read_text().splitlines()
        assert csv[0].startswith("# heatlift-csv schilder v1")
        assert csv[1] == "epsilon,threshold,probability,eps2_log"
        assert len(csv) == 2 + 3

    def test_bounds_scan_subset(self, tmp_path):
        code = main(
            ["bounds-scan", "--out", str(tmp_path), "--set", 'bounds=["kolm_t"]']
        )
        assert code == 0
        payload = json.loads((tmp_path / "bound_scans.json").read_text())
        assert len(payload["reports"]) == 1
        assert payload["reports"][0]["bound_id"] == "kolm_t"
        assert not payload["reports"][0]["diverged"]

    def test_lift_check_passes(self, tmp_path):
        code = main(
            [
                "lift-check",
                "--out",
                str(tmp_path),
                "--set",
                "n_slices=3",
                "--set",
                "n_telescope=3",
                "--set",
                "n_modes=32",
                "--set",
                "n_time=4",
                "--set",
                "grid_level=5",
                "--set",
                "dim=2",
            ]
        )
        assert code == 0
        payload = json.loads((tmp_path / "lift_check.json").read_text())
        assert payload["passed"]
        assert payload["max_chen_defect"] <= 1e-12
        assert payload["max_symmetric_defect"] <= 1e-12
        assert payload["max_telescope_defect"] <= 1e-12

    def test_chaos_cli(self, tmp_path):
        code = main(
            [
                "chaos",
                "--out",
                str(tmp_path),
                "--set",
                "replicas=2000",
                "--set",
                "n_modes=16",
            ]
        )
        assert code == 0
        payload = json.loads((tmp_path / "chaos.json").read_text())
        assert payload["degree"] == 1
        assert 0.2 <= payload["exponent"] <= 0.8

    def test_cm_cli(self, tmp_path):
        code = main(
            [
                "cm",
                "--out",
                str(tmp_path),
                "--set",
                "n_modes=8",
                "--set",
                "n_time=8",
                "--set",
                "grid_level=6",
                "--set",
                'k_range=[2,3,4]',
            ]
        )
        assert code == 0
        payload = json.loads((tmp_path / "cm.json").read_text())
        assert payload["rate_function"] == pytest.approx(0.5)
        assert len(payload["lift_decay"]) == 3

    def test_cm_rejects_mode_beyond_cutoff(self, tmp_path):
        code = main(
            [
                "cm",
                "--out",
                str(tmp_path),
                "--set",
                "n_modes=4",
                "--set",
                'controls=[{"mode": 9, "component": 0, "breakpoints": [0.0, 1.0], "values": [1.0]}]',
            ]
        )
        assert code == 2

    def test_tails_cli(self, tmp_path):
        code = main(
            [
                "tails",
                "--out",
                str(tmp_path),
                "--set",
                "replicas=20",
                "--set",
                'eps_list=[1.0,0.5]',
                "--set",
                "n_modes=16",
                "--set",
                "n_time=4",
                "--set",
                "grid_level=4",
                "--set",
                "dim=2",
            ]
        )
        assert code == 0
        lines = (tmp_path / "tails.csv").read_text().splitlines()
        assert lines[0].startswith("# heatlift-csv tails v1")
        assert len(lines) == 2 + 2
