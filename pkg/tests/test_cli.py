import dataclasses
from pathlib import Path

import numpy as np
import pytest
from pytest import approx

from mdpc import cli, ensemble, mdpc
from mdpc.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def small_config(tmp_path, **overrides) -> cli.ExperimentConfig:
    cfg = cli.load_config(CONFIG_DIR / "test1.cfg")
    base = dict(
        n_samples=300,
        subsample=20,
        horizon=0.2,
        mode="sigma",
        delta=0.05,
        tau=None,
        output_dir=str(tmp_path / "out"),
    )
    base.update(overrides)
    return dataclasses.replace(cfg, **base)


class TestLoadConfig:
    def test_bundled_test1(self):
        cfg = cli.load_config(CONFIG_DIR / "test1.cfg")
        assert cfg.n_samples == 10_000
        assert cfg.subsample == 100
        assert cfg.dt == approx(1e-2)
        assert cfg.nu == approx(1e-2)
        assert cfg.horizon == approx(1.0)
        assert cfg.delta == approx(0.1)
        assert cfg.tau == approx(1.0)
        assert cfg.mode == "mean_sigma"
        assert cfg.kernel_kind == "bounded_confidence"

    def test_bundled_test2(self):
        cfg = cli.load_config(CONFIG_DIR / "test2.cfg")
        assert cfg.n_samples == 100_000
        assert cfg.subsample == 100
        assert cfg.dt == approx(5e-2)
        assert cfg.nu == approx(0.1)
        assert cfg.horizon == approx(3.0)
        assert cfg.delta == approx(1.0)
        assert cfg.tau is None
        assert cfg.order == "second"
        assert cfg.coupling == ensemble.VELOCITY_COUPLING

    def test_bundled_test3(self):
        cfg = cli.load_config(CONFIG_DIR / "test3.cfg")
        assert cfg.n_samples == 100_000
        assert cfg.subsample == 10
        assert cfg.dt == approx(1e-2)
        assert cfg.nu == approx(1.0)
        assert cfg.horizon == approx(7.0)
        assert cfg.delta == approx(0.1)
        assert cfg.initial_params["initial_radius"] == approx(2.0 / np.sqrt(3.0))

    def test_empty_file_lists_mandatory_keys(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("")
        with pytest.raises(ConfigError) as err:
            cli.load_config(path)
        for key in ("name", "seed", "kernel", "n_samples", "dt", "nu", "horizon", "mode"):
            assert key in str(err.value)

    def test_unknown_key_reports_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("name = x\nwhatever = 3\n")
        with pytest.raises(ConfigError, match="bad.cfg:2"):
            cli.load_config(path)

    def test_tau_rejected_outside_mean_sigma(self, tmp_path):
        text = (CONFIG_DIR / "test2.cfg").read_text() + "\ntau = 1.0\n"
        path = tmp_path / "t.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError, match="tau"):
            cli.load_config(path)

    def test_mean_sigma_requires_tau(self, tmp_path):
        text = (CONFIG_DIR / "test2.cfg").read_text().replace("mode = sigma", "mode = mean_sigma")
        path = tmp_path / "t.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError, match="tau"):
            cli.load_config(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "dup.cfg"
        path.write_text("name = a\nname = b\n")
        with pytest.raises(ConfigError, match="duplicate"):
            cli.load_config(path)

    def test_order_mismatch_rejected(self, tmp_path):
        text = (CONFIG_DIR / "test1.cfg").read_text().replace("order = first", "order = second")
        path = tmp_path / "t.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError, match="order"):
            cli.load_config(path)


class TestRunExperiment:
    def test_writes_artifacts(self, tmp_path):
        cfg = small_config(tmp_path, snapshot_stride=10, microscopic_n=8)
        out = tmp_path / "run"
        run = cli.run_experiment(cfg, out)
        moments = (out / "moments.csv").read_text().splitlines()
        assert moments[0] == cli.MOMENTS_SCHEMA
        header = moments[1].split(",")
        assert header[:2] == ["t", "m1_0"]
        assert "running_J" in header
        assert len(moments) == 2 + run.n_steps + 1
        updates = (out / "updates.csv").read_text().splitlines()
        assert updates[0] == cli.UPDATES_SCHEMA
        assert len(updates) == 2 + len(run.update_times)
        summary = (out / "summary.txt").read_text()
        assert f"cost_J = {run.cost_j:.17g}" in summary
        assert "update_fraction" in summary
        snaps = (out / "snapshots.csv").read_text().splitlines()
        assert snaps[0] == cli.SNAPSHOTS_SCHEMA
        micro = (out / "micro.csv").read_text().splitlines()
        assert micro[0] == cli.MICRO_SCHEMA
        # 8 agents, n_steps + 1 frames
        assert len(micro) == 2 + 8 * (run.n_steps + 1)

    def test_deterministic_outputs(self, tmp_path):
        cfg = small_config(tmp_path)
        cli.run_experiment(cfg, tmp_path / "a")
        cli.run_experiment(cfg, tmp_path / "b")
        for name in ("moments.csv", "updates.csv", "summary.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_outputs(self, tmp_path):
        cfg = small_config(tmp_path)
        cli.run_experiment(cfg, tmp_path / "a")
        cli.run_experiment(dataclasses.replace(cfg, seed=cfg.seed + 1), tmp_path / "b")
        assert (tmp_path / "a" / "moments.csv").read_bytes() != (
            tmp_path / "b" / "moments.csv"
        ).read_bytes()

    def test_second_order_micro_run(self, tmp_path):
        cfg = cli.load_config(CONFIG_DIR / "test2.cfg")
        cfg = dataclasses.replace(
            cfg, n_samples=300, subsample=20, horizon=0.2, microscopic_n=6
        )
        out = tmp_path / "t2"
        cli.run_experiment(cfg, out)
        micro = (out / "micro.csv").read_text().splitlines()
        assert micro[1].split(",") == ["step", "t", "agent", "v_0", "x_0"]


class TestSweep:
    def test_sweep_outputs_and_baseline(self, tmp_path):
        cfg = small_config(tmp_path)
        runs = cli.run_sweep(cfg, [0.5, 0.01], jobs=1, out_dir=tmp_path / "sw")
        table = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
        assert table[0] == cli.SWEEP_SCHEMA
        assert table[1] == "delta,update_fraction,final_sigma2,cost_J"
        assert len(table) == 2 + 3
        assert table[-1].startswith("closed,")
        assert (tmp_path / "sw" / "delta_0.5" / "moments.csv").exists()
        assert (tmp_path / "sw" / "closed_loop" / "summary.txt").exists()
        # matched seeds: smaller delta costs no more than larger delta
        assert runs[1].cost_j <= runs[0].cost_j + 0.05 * runs[0].cost_j

    def test_sweep_jobs_bitwise_identical(self, tmp_path):
        cfg = small_config(tmp_path)
        cli.run_sweep(cfg, [0.5, 0.01], jobs=1, out_dir=tmp_path / "j1")
        cli.run_sweep(cfg, [0.5, 0.01], jobs=2, out_dir=tmp_path / "j2")
        for rel in (
            "sweep.csv",
            "delta_0.5/moments.csv",
            "delta_0.01/moments.csv",
            "closed_loop/moments.csv",
        ):
            assert (tmp_path / "j1" / rel).read_bytes() == (tmp_path / "j2" / rel).read_bytes()

    def test_sweep_requires_adaptive_mode(self, tmp_path):
        cfg = small_config(tmp_path, mode="closed", delta=None)
        with pytest.raises(ConfigError):
            cli.run_sweep(cfg, [0.1])


class TestMain:
    def test_run_verb(self, tmp_path, capsys):
        path = tmp_path / "c.cfg"
        path.write_text(
            "\n".join(
                [
                    "name = tiny",
                    "seed = 5",
                    "kernel = bounded_confidence",
                    "kernel_strength = 10.0",
                    "kernel_radius = 0.25",
                    "order = first",
                    "initial = uniform_interval",
                    "initial_lo = 0.25",
                    "initial_hi = 1.75",
                    "n_samples = 200",
                    "subsample = 10",
                    "dt = 0.01",
                    "nu = 0.05",
                    "horizon = 0.1",
                    "mode = sigma",
                    "delta = 0.1",
                ]
            )
        )
        code = cli.main(["run", str(path), "--out", str(tmp_path / "o")])
        assert code == 0
        assert (tmp_path / "o" / "moments.csv").exists()
        assert "tiny" in capsys.readouterr().out

    def test_run_verb_seed_override(self, tmp_path):
        cfg = small_config(tmp_path)
        path = tmp_path / "c.cfg"
        # write a config file equivalent to small_config
        lines = [
            "name = t",
            "seed = 9",
            "kernel = bounded_confidence",
            "kernel_strength = 10.0",
            "kernel_radius = 0.25",
            "order = first",
            "initial = uniform_interval",
            "initial_lo = 0.25",
            "initial_hi = 1.75",
            "n_samples = 300",
            "subsample = 20",
            "dt = 0.01",
            "nu = 0.01",
            "horizon = 0.2",
            "mode = sigma",
            "delta = 0.05",
        ]
        path.write_text("\n".join(lines))
        assert cli.main(["run", str(path), "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["run", str(path), "--out", str(tmp_path / "b"), "--seed", "9"]) == 0
        assert cli.main(["run", str(path), "--out", str(tmp_path / "c"), "--seed", "10"]) == 0
        read = lambda d: (tmp_path / d / "moments.csv").read_bytes()
        assert read("a") == read("b")
        assert read("a") != read("c")

    def test_bad_config_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("nonsense\n")
        assert cli.main(["run", str(path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_riccati_verb(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text(
            "\n".join(
                [
                    "name = r",
                    "seed = 5",
                    "kernel = cucker_smale",
                    "kernel_offset = 0.0",
                    "kernel_scale = 1.0",
                    "kernel_softening = 1.0",
                    "kernel_exponent = 2.0",
                    "order = first",
                    "initial = uniform_interval",
                    "initial_lo = -1.0",
                    "initial_hi = 1.0",
                    "n_samples = 100",
                    "subsample = 10",
                    "dt = 0.05",
                    "nu = 0.1",
                    "horizon = 1.0",
                    "mode = closed",
                ]
            )
        )
        assert cli.main(["riccati", str(path), "--out", str(tmp_path / "r")]) == 0
        lines = (tmp_path / "r" / "riccati.csv").read_text().splitlines()
        assert lines[0] == cli.RICCATI_SCHEMA
        assert lines[1] == "t,kd,ko,s,kd_cumint,kdko_cumint"
        assert len(lines) == 2 + 21

    def test_sweep_verb(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text(
            "\n".join(
                [
                    "name = sw",
                    "seed = 5",
                    "kernel = bounded_confidence",
                    "kernel_strength = 10.0",
                    "kernel_radius = 0.25",
                    "order = first",
                    "initial = uniform_interval",
                    "initial_lo = 0.25",
                    "initial_hi = 1.75",
                    "n_samples = 200",
                    "subsample = 10",
                    "dt = 0.01",
                    "nu = 0.05",
                    "horizon = 0.1",
                    "mode = sigma",
                    "delta = 0.1",
                ]
            )
        )
        code = cli.main(
            ["sweep", str(path), "--deltas", "0.5,0.01", "--jobs", "2", "--out", str(tmp_path / "s")]
        )
        assert code == 0
        assert (tmp_path / "s" / "sweep.csv").exists()
