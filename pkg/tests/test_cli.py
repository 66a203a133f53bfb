"""End-to-end checks of the command-line front end.

Subcommands run in-process through cli.main so exit codes and artifacts
can be asserted quickly; one test goes through the installed console
script to prove the packaging entry point resolves.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from symmvmc import cli
from symmvmc.vmc import TrainResult, load_checkpoint

FREE_1D = """
[system]
name = "free"
dimension = 1
n_up = 1

[group]
name = "trivial"

[output]
directory = "{out}"
"""

CHAIN_SMALL = """
[system]
name = "chain"
n_up = 1

[ansatz]
cutoff = 2.0

[sampler]
n_samples = 32
chain_length = 4
burn_in = 15
step_size = 0.3

[training]
steps = 3
learning_rate = 0.05

[evaluation]
n_chains = 12
chain_length = 12
burn_in = 15
thin = 2

[seeds]
master = 7

[output]
directory = "{out}"
"""


def write_config(tmp_path, text, name="exp.toml", **fmt):
    path = tmp_path / name
    path.write_text(text.format(**fmt), encoding="ascii")
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


class TestConfigDocument:
    def test_round_trip_default(self):
        config = cli.ExperimentConfig()
        assert cli.parse_config(cli.emit_config(config)) == config

    def test_round_trip_customized(self):
        config = cli.ExperimentConfig(
            system=cli.SystemConfig(name="square", n_up=2, n_down=2),
            method=cli.MethodConfig(name="pa", subset=(0, 3)),
            scan=cli.ScanConfig(base_seeds=((0.5, 0.5),), resolution=9),
            seed=123, output="elsewhere")
        assert cli.parse_config(cli.emit_config(config)) == config

    def test_round_trip_custom_group_generators(self):
        gens = ({"rotation": ((-1.0,),), "translation": (0.5,)},)
        config = cli.ExperimentConfig(
            group=cli.GroupConfig(name="custom", generators=gens,
                                  max_order=4))
        assert cli.parse_config(cli.emit_config(config)) == config

    def test_toml_and_json_agree(self):
        toml_text = "[system]\nname = 'square'\nn_up = 4\n"
        json_text = '{"system": {"name": "square", "n_up": 4}}'
        assert cli.parse_config(toml_text) == cli.parse_config(json_text)

    def test_unknown_key_named(self):
        with pytest.raises(cli.ConfigError, match="system.deptth"):
            cli.parse_config("[system]\ndeptth = 3.0\n")

    def test_unknown_section_named(self):
        with pytest.raises(cli.ConfigError, match="sampling"):
            cli.parse_config("[sampling]\nn_samples = 8\n")

    def test_type_error_named(self):
        with pytest.raises(cli.ConfigError, match="sampler.n_samples"):
            cli.parse_config("[sampler]\nn_samples = 'many'\n")

    def test_invalid_toml_rejected(self):
        with pytest.raises(cli.ConfigError, match="TOML"):
            cli.parse_config("[system\nname = 'chain'\n")


class TestValidation:
    def test_da_requires_divisible_batch(self):
        config = cli.parse_config("[method]\nname = 'da'\nk = 3\n")
        with pytest.raises(cli.ConfigError, match="divisible"):
            cli.build_experiment(config)

    def test_epsilon_must_stay_below_inradius(self):
        config = cli.parse_config(
            "[method]\nname = 'pc'\nepsilon = 0.3\n")
        with pytest.raises(cli.ConfigError, match="inradius"):
            cli.build_experiment(config)

    def test_subset_indices_checked(self):
        config = cli.parse_config("[method]\nname = 'pa'\nsubset = [0, 9]\n")
        with pytest.raises(cli.ConfigError, match="subset"):
            cli.build_experiment(config)

    def test_free_system_needs_explicit_group(self):
        config = cli.parse_config(
            "[system]\nname = 'free'\ndimension = 1\n")
        with pytest.raises(cli.ConfigError, match="group"):
            cli.build_experiment(config)

    def test_custom_generators_build_a_group(self):
        config = cli.parse_config(
            "[group]\nname = 'custom'\nmax_order = 4\n"
            "[[group.generators]]\n"
            "rotation = [[-1.0]]\ntranslation = [0.5]\n")
        exp = cli.build_experiment(config)
        assert len(exp.group) == 2


class TestOracleCommand:
    def test_free_spectrum_and_exit_zero(self, tmp_path):
        config = write_config(tmp_path, FREE_1D, out=tmp_path / "run")
        assert run_cli("oracle", "--config", config, "--quiet") == 0
        report = json.loads(
            (tmp_path / "run" / "reports" / "spectrum.json").read_text())
        assert report["eigenvalues"] == pytest.approx(
            [0.0, 0.5, 0.5, 2.0, 2.0])
        assert report["ground_state_energy"] == pytest.approx(0.0)

    def test_interacting_system_refused(self, tmp_path):
        config = write_config(
            tmp_path, "[system]\nname = 'chain'\nlambda_int = 1.0\n"
            "[output]\ndirectory = '{out}'\n", out=tmp_path / "run")
        rc = run_cli("oracle", "--config", config, "--quiet")
        assert rc == cli.EXIT_CONFIG

    def test_console_script_resolves(self, tmp_path):
        config = write_config(tmp_path, FREE_1D, out=tmp_path / "run")
        proc = subprocess.run(
            [sys.executable, "-m", "symmvmc.cli", "oracle", "--config",
             str(config), "--quiet"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr


class TestTrainCommand:
    def test_writes_run_directory(self, tmp_path):
        out = tmp_path / "run"
        config = write_config(tmp_path, CHAIN_SMALL, out=out)
        assert run_cli("train", "--config", config, "--quiet") == 0
        assert (out / "config.json").exists()
        lines = (out / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == "step,energy,stderr,var_elocal,acceptance," \
                           "c_samp,c_grad"
        assert len(lines) == 4
        ansatz, meta = load_checkpoint(out / "checkpoints" / "step_3.bin")
        assert meta["step"] == 3
        assert ansatz.n_up == 1

    def test_zero_steps_keeps_initial_checkpoint_only(self, tmp_path):
        config = write_config(tmp_path, CHAIN_SMALL, out=tmp_path / "run")
        doc = json.loads(cli.emit_config(cli.parse_config(
            config.read_text())))
        doc["training"]["steps"] = 0
        zero = tmp_path / "zero.json"
        zero.write_text(json.dumps(doc))
        out0 = tmp_path / "run0"
        assert run_cli("train", "--config", zero, "--out", out0,
                       "--quiet") == 0
        names = sorted(p.name for p in (out0 / "checkpoints").iterdir())
        assert names == ["step_0.bin", "step_0.json"]
        assert (out0 / "metrics.csv").read_text().strip().split("\n") \
            == ["step,energy,stderr,var_elocal,acceptance,c_samp,c_grad"]

    def test_rerun_is_byte_identical(self, tmp_path):
        config = write_config(tmp_path, CHAIN_SMALL, out=tmp_path / "a")
        assert run_cli("train", "--config", config, "--quiet") == 0
        assert run_cli("train", "--config", config, "--out",
                       tmp_path / "b", "--quiet") == 0
        for name in ("metrics.csv", "checkpoints/step_3.bin",
                     "checkpoints/step_3.json"):
            assert (tmp_path / "a" / name).read_bytes() \
                == (tmp_path / "b" / name).read_bytes()

    def test_inference_only_method_rejected(self, tmp_path):
        config = write_config(
            tmp_path, "[method]\nname = 'pa'\n"
            "[output]\ndirectory = '{out}'\n", out=tmp_path / "run")
        assert run_cli("train", "--config", config, "--quiet") \
            == cli.EXIT_CONFIG

    def test_divergence_maps_to_exit_three(self, tmp_path, monkeypatch,
                                           capsys):
        def fake_train(h, base, settings, group=None, trace_path=None,
                       checkpoint_dir=None):
            return TrainResult(base, (), True, 1.0)

        monkeypatch.setattr(cli, "train", fake_train)
        config = write_config(tmp_path, CHAIN_SMALL, out=tmp_path / "run")
        assert run_cli("train", "--config", config) == cli.EXIT_DIVERGED
        assert "diverged" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("trained")
    out = tmp_path / "run"
    config = write_config(tmp_path, CHAIN_SMALL, out=out)
    assert run_cli("train", "--config", config, "--quiet") == 0
    return config, out / "checkpoints" / "step_3.bin"


class TestEvaluateCommand:
    def evaluate(self, trained, out, *extra):
        config, checkpoint = trained
        rc = run_cli("evaluate", "--config", config, "--checkpoint",
                     checkpoint, "--out", out, "--quiet", *extra)
        assert rc == 0
        return json.loads((out / "reports" / "evaluate.json").read_text())

    def test_reports_metrics(self, trained, tmp_path):
        report = self.evaluate(trained, tmp_path / "ev")
        assert report["method"] == "og"
        assert np.isfinite(report["energy"])
        assert report["var_elocal"] > 0
        assert report["n_samples"] > 0

    def test_identity_subset_pa_matches_og(self, trained, tmp_path):
        config, checkpoint = trained
        doc = json.loads(cli.emit_config(cli.parse_config(
            config.read_text())))
        doc["method"]["subset"] = [0]
        patched = tmp_path / "subset.json"
        patched.write_text(json.dumps(doc))
        reports = {}
        for method in ("og", "pa"):
            out = tmp_path / method
            assert run_cli("evaluate", "--config", patched, "--checkpoint",
                           checkpoint, "--out", out, "--method", method,
                           "--quiet") == 0
            reports[method] = json.loads(
                (out / "reports" / "evaluate.json").read_text())
        for key in ("energy", "stderr", "var_elocal", "acceptance"):
            assert reports["og"][key] == reports["pa"][key]
        # averaging over the identity alone changes nothing, exactly
        assert reports["pa"]["var_pa_over_og"] == 0.0

    def test_rerun_is_byte_identical(self, trained, tmp_path):
        config, checkpoint = trained
        for out in (tmp_path / "r1", tmp_path / "r2"):
            assert run_cli("evaluate", "--config", config, "--checkpoint",
                           checkpoint, "--out", out, "--quiet") == 0
        assert (tmp_path / "r1" / "reports" / "evaluate.json").read_bytes() \
            == (tmp_path / "r2" / "reports" / "evaluate.json").read_bytes()

    def test_missing_checkpoint_flag_is_config_error(self, trained,
                                                     tmp_path):
        config, _ = trained
        assert run_cli("evaluate", "--config", config, "--out",
                       tmp_path / "ev", "--quiet") == cli.EXIT_CONFIG

    def test_incompatible_checkpoint_exits_four(self, trained, tmp_path):
        config, checkpoint = trained
        doc = json.loads(cli.emit_config(cli.parse_config(
            config.read_text())))
        doc["system"]["n_down"] = 1
        patched = tmp_path / "twoel.json"
        patched.write_text(json.dumps(doc))
        rc = run_cli("evaluate", "--config", patched, "--checkpoint",
                     checkpoint, "--out", tmp_path / "ev", "--quiet")
        assert rc == cli.EXIT_CHECKPOINT

    def test_garbage_checkpoint_exits_four(self, trained, tmp_path):
        config, _ = trained
        bogus = tmp_path / "step_9.bin"
        bogus.write_bytes(b"not a checkpoint")
        rc = run_cli("evaluate", "--config", config, "--checkpoint", bogus,
                     "--out", tmp_path / "ev", "--quiet")
        assert rc == cli.EXIT_CHECKPOINT

    def test_train_only_method_rejected_at_inference(self, trained,
                                                     tmp_path):
        config, checkpoint = trained
        rc = run_cli("evaluate", "--config", config, "--checkpoint",
                     checkpoint, "--out", tmp_path / "ev", "--method",
                     "da", "--quiet")
        assert rc == cli.EXIT_CONFIG


class TestScanCommand:
    def test_square_pa_scan_is_symmetric(self, tmp_path):
        out = tmp_path / "run"
        config = write_config(
            tmp_path,
            "[system]\nname = 'square'\nn_up = 1\n"
            "[method]\nname = 'pa'\n"
            "[scan]\nbase_seeds = [[0.5, 0.5]]\nresolution = 10\n"
            "[output]\ndirectory = '{out}'\n", out=out)
        assert run_cli("scan", "--config", config, "--quiet") == 0
        report = json.loads(
            (out / "reports" / "scan.json").read_text())
        assert report["max_error"] <= 1e-9
        assert report["satisfied_relations"] == 8
        text = (out / "scans" / "scan.csv").read_text()
        assert text.startswith("# axes=0,1\n# resolution=10\n")

    def test_trivial_group_scan_is_flat(self, tmp_path):
        out = tmp_path / "run"
        config = write_config(
            tmp_path,
            "[system]\nname = 'free'\ndimension = 1\nn_up = 1\n"
            "[group]\nname = 'trivial'\n"
            "[scan]\nresolution = 7\n"
            "[output]\ndirectory = '{out}'\n", out=out)
        assert run_cli("scan", "--config", config, "--quiet") == 0
        report = json.loads(
            (out / "reports" / "scan.json").read_text())
        assert report["group_order"] == 1
        assert report["max_error"] == 0.0

    def test_orbit_electron_mismatch_is_config_error(self, tmp_path):
        config = write_config(
            tmp_path,
            "[system]\nname = 'square'\nn_up = 1\n"
            "[scan]\nbase_seeds = [[0.25, 0.25]]\n"
            "[output]\ndirectory = '{out}'\n", out=tmp_path / "run")
        assert run_cli("scan", "--config", config, "--quiet") \
            == cli.EXIT_CONFIG


class TestGradstatsCommand:
    def test_two_replicates_exit_zero(self, tmp_path):
        out = tmp_path / "run"
        config = write_config(
            tmp_path,
            "[system]\nname = 'chain'\nn_up = 1\n"
            "[sampler]\nn_samples = 16\nchain_length = 3\nburn_in = 10\n"
            "[stats]\nreplicates = 2\nbootstrap = 20\n"
            "[output]\ndirectory = '{out}'\n", out=out)
        assert run_cli("gradstats", "--config", config, "--quiet") == 0
        report = json.loads(
            (out / "reports" / "gradstats.json").read_text())
        assert report["method"] == "OG"
        assert report["replicates"] == 2
        assert report["normalized_norm"] >= 0.0
        assert len(report["mean"]) > 0

    def test_inference_method_rejected(self, tmp_path):
        config = write_config(
            tmp_path,
            "[method]\nname = 'pa'\n[output]\ndirectory = '{out}'\n",
            out=tmp_path / "run")
        assert run_cli("gradstats", "--config", config, "--quiet") \
            == cli.EXIT_CONFIG


class TestProbeSmoothingCommand:
    def test_one_row_per_epsilon(self, tmp_path):
        out = tmp_path / "run"
        config = write_config(
            tmp_path,
            "[method]\nsmoothing = 'spline2'\n"
            "[stats]\nepsilons = [0.1, 0.05]\ngrid_points = 800\n"
            "scan_points = 101\n"
            "[output]\ndirectory = '{out}'\n", out=out)
        assert run_cli("probe-smoothing", "--config", config,
                       "--quiet") == 0
        lines = (out / "scans" / "probe_smoothing.csv").read_text() \
            .strip().split("\n")
        assert lines[0] == "epsilon,kind,max_d1,max_d2,bound_d1,bound_d2," \
                           "max_elocal_deviation"
        assert len(lines) == 3
        first = lines[1].split(",")
        assert float(first[0]) == 0.1
        assert first[1] == "spline2"


class TestResolvedConfigArtifact:
    def test_overrides_land_in_stored_config(self, tmp_path):
        out = tmp_path / "run"
        config = write_config(tmp_path, FREE_1D, out=tmp_path / "ignored")
        assert run_cli("oracle", "--config", config, "--out", out,
                       "--seed", "99", "--quiet") == 0
        stored = json.loads((out / "config.json").read_text())
        assert stored["seeds"]["master"] == 99
        assert stored["output"]["directory"] == str(out)
        parsed = cli.parse_config((out / "config.json").read_text())
        assert parsed.seed == 99
