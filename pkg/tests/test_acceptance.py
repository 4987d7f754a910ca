"""End-to-end acceptance suite.

Each test prints one PASS line when its criterion holds; expensive runs are
shared through session fixtures.  Criteria 5-7 reproduce the benchmark tables
at full sampling sizes, so this module dominates the suite's runtime
(roughly 15 minutes on two cores).
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest
from pytest import approx

from mdpc import bounds, cli, ensemble, kernels, mdpc, riccati

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

TEST1_SEEDS = (20240601, 20240611, 20240621, 20240631, 20240641)


def timed_run(bundle, run_cfg):
    start = time.perf_counter()
    run = mdpc.run_mdpc(run_cfg, bundle)
    return run, time.perf_counter() - start


@pytest.fixture(scope="session")
def test1_runs():
    cfg = cli.load_config(CONFIG_DIR / "test1.cfg")
    out = {"cfg": cfg, "closed": [], "tight": [], "loose": []}
    for seed in TEST1_SEEDS:
        bundle = cli.build_bundle(dataclasses.replace(cfg, seed=seed))
        out["closed"].append(timed_run(bundle, mdpc.MdpcConfig("closed")))
        out["tight"].append(timed_run(bundle, mdpc.MdpcConfig("sigma", delta=1e-8)))
        out["loose"].append(timed_run(bundle, mdpc.MdpcConfig("sigma", delta=0.1)))
    base = cli.build_bundle(cfg)
    out["bundle"] = base
    out["open"] = timed_run(base, mdpc.MdpcConfig("open"))
    out["inexact"] = timed_run(base, mdpc.MdpcConfig("inexact"))
    out["limit"] = timed_run(base, mdpc.MdpcConfig("sigma", delta=1e-30))
    return out


@pytest.fixture(scope="session")
def test2_runs():
    cfg = cli.load_config(CONFIG_DIR / "test2.cfg")
    bundle = cli.build_bundle(cfg)
    return {
        "cfg": cfg,
        "bundle": bundle,
        "closed": timed_run(bundle, mdpc.MdpcConfig("closed")),
        "open": timed_run(bundle, mdpc.MdpcConfig("open")),
        "inexact": timed_run(bundle, mdpc.MdpcConfig("inexact")),
        "mdpc": timed_run(bundle, mdpc.MdpcConfig("sigma", delta=1.0)),
        "limit": timed_run(bundle, mdpc.MdpcConfig("sigma", delta=1e-30)),
    }


@pytest.fixture(scope="session")
def test3_runs():
    cfg = cli.load_config(CONFIG_DIR / "test3.cfg")
    bundle = cli.build_bundle(cfg)
    return {
        "cfg": cfg,
        "bundle": bundle,
        "closed": timed_run(bundle, mdpc.MdpcConfig("closed")),
        "open": timed_run(bundle, mdpc.MdpcConfig("open")),
        "inexact": timed_run(bundle, mdpc.MdpcConfig("inexact")),
        "mdpc": timed_run(bundle, mdpc.MdpcConfig("sigma", delta=0.1)),
        "limit": timed_run(bundle, mdpc.MdpcConfig("sigma", delta=1e-30)),
    }


def test_01_riccati_closed_form():
    """Combined gain matches sqrt(nu) tanh((T-t)/sqrt(nu)) on every test grid."""
    start = time.perf_counter()
    grids = {
        "test1": (10.0, 0.01, 1.0, 0.01),
        "test2": (1.0, 0.1, 3.0, 0.05),
        "test3": (-1.0, 1.0, 7.0, 0.01),
    }
    for name, (p_bar, nu, horizon, dt) in grids.items():
        sol = riccati.solve_limit(riccati.RiccatiConfig(p_bar, nu, horizon, dt))
        defect = np.max(np.abs(sol.s - riccati.s_closed_form(sol.t, nu, horizon)))
        assert defect <= 1e-6, (name, defect)
        sol_n = riccati.solve_scaled_finite_n(
            riccati.RiccatiConfig(p_bar, nu, horizon, dt, n_agents=50)
        )
        defect_n = np.max(np.abs(sol_n.s - riccati.s_closed_form(sol_n.t, nu, horizon)))
        assert defect_n <= 1e-4, (name, defect_n)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 01 riccati closed form: PASS ({elapsed:.2f}s)")


def test_02_full_matrix_oracle_equivalence():
    """Scaled reduced gains match the dense matrix solve for N in 2..20."""
    start = time.perf_counter()
    for n in (2, 5, 10, 20):
        cfg = riccati.RiccatiConfig(1.0, 0.1, 1.0, 0.01, n_agents=n)
        full = riccati.solve_full_matrix_oracle(cfg)
        red = riccati.solve_scaled_finite_n(cfg)
        err_kd = np.max(np.abs(n * full[:, 0, 0] - red.kd)) / np.max(np.abs(red.kd))
        err_ko = np.max(np.abs(n * n * full[:, 0, 1] - red.ko)) / max(
            np.max(np.abs(red.ko)), 1e-30
        )
        assert err_kd <= 1e-6 and err_ko <= 1e-6, (n, err_kd, err_ko)
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 02 full-matrix oracle equivalence: PASS ({elapsed:.2f}s)")


def test_03_mean_decay_law(test1_runs):
    """Closed-loop final mean sits below the cosh-ratio decay bound."""
    n_samples = test1_runs["cfg"].n_samples
    for (run, elapsed) in test1_runs["closed"]:
        m1_final = float(np.abs(run.final_m1[0]))
        m1_zero = float(np.abs(run.trace.m1[0, 0]))
        sigma0 = run.trace.sigma2[0]
        bound = m1_zero / np.cosh(10.0)
        slack = 3.0 * (
            np.sqrt(run.final_sigma2 / n_samples)
            + np.sqrt(sigma0 / n_samples) / np.cosh(10.0)
        )
        assert m1_final <= bound + slack, (m1_final, bound, slack)
    print(f"\nACCEPTANCE 03 mean decay law: PASS (|m1(T)| ~ {m1_final:.2e})")


def test_04_envelope_containment(test1_runs, test2_runs, test3_runs):
    """Simulated variance stays inside the analytic envelopes +- 3 MC SE."""
    cases = [("test1", test1_runs), ("test2", test2_runs), ("test3", test3_runs)]
    for name, runs in cases:
        for mode in ("closed", "open", "inexact"):
            entry = runs[mode]
            if name == "test1" and mode == "closed":
                entry = entry[0]
            run, _ = entry
            tr = run.trace
            slack = 3.0 * tr.sigma2_se
            assert np.all(tr.sigma2 <= tr.bound_upper + slack), (name, mode, "upper")
            assert np.all(tr.sigma2 >= tr.bound_lower - slack), (name, mode, "lower")
    print("\nACCEPTANCE 04 envelope containment: PASS (3 tests x 3 laws)")


def test_05_table_opinion_formation(test1_runs):
    """Five-seed reproduction of the opinion-formation benchmark row."""
    closed_j = np.array([run.cost_j for run, _ in test1_runs["closed"]])
    tight_j = np.array([run.cost_j for run, _ in test1_runs["tight"]])
    tight_up = np.array([run.update_fraction for run, _ in test1_runs["tight"]])
    loose_up = np.array([run.update_fraction for run, _ in test1_runs["loose"]])
    assert closed_j.mean() == approx(0.1281, rel=0.02)
    assert tight_j.mean() == approx(0.1281, rel=0.02)
    assert abs(tight_up.mean() - 0.72) <= 0.05
    assert abs(loose_up.mean() - 0.04) <= 0.03
    geo = lambda runs: float(
        np.exp(np.mean([np.log(run.final_sigma2) for run, _ in runs]))
    )
    for key, reference in (("closed", 3.80e-12), ("tight", 2.22e-12), ("loose", 8.94e-9)):
        ratio = geo(test1_runs[key]) / reference
        assert 0.1 <= ratio <= 10.0, (key, ratio)
    for key in ("closed", "tight", "loose"):
        for _, elapsed in test1_runs[key]:
            assert elapsed < 60.0
    print(
        f"\nACCEPTANCE 05 opinion-formation table: PASS "
        f"(J_closed={closed_j.mean():.4f}, updates {tight_up.mean():.0%}/{loose_up.mean():.0%})"
    )


def test_06_table_alignment(test2_runs):
    """Alignment benchmark: closed-loop and delta=1 adaptive runs."""
    closed, t_closed = test2_runs["closed"]
    adaptive, t_adaptive = test2_runs["mdpc"]
    assert closed.cost_j == approx(2.9951, rel=0.02)
    assert adaptive.cost_j == approx(3.0059, rel=0.02)
    assert abs(adaptive.update_fraction - 0.13) <= 0.05
    assert t_closed < 300.0 and t_adaptive < 300.0
    print(
        f"\nACCEPTANCE 06 alignment table: PASS "
        f"(J_closed={closed.cost_j:.4f}, J_mdpc={adaptive.cost_j:.4f}, "
        f"updates={adaptive.update_fraction:.0%})"
    )


def test_07_table_aggregation(test3_runs):
    """Aggregation benchmark: closed-loop and delta=0.1 adaptive runs."""
    closed, t_closed = test3_runs["closed"]
    adaptive, t_adaptive = test3_runs["mdpc"]
    assert closed.cost_j == approx(2.9750, rel=0.02)
    assert abs(adaptive.update_fraction - 0.04) <= 0.03
    assert t_closed < 600.0 and t_adaptive < 600.0
    print(
        f"\nACCEPTANCE 07 aggregation table: PASS "
        f"(J_closed={closed.cost_j:.4f}, updates={adaptive.update_fraction:.0%})"
    )


def test_08_tiny_delta_is_closed_loop(test1_runs, test2_runs, test3_runs):
    """delta -> 0 adaptive runs replay the closed-loop trajectory bit for bit.

    The moment, control and cost columns must agree exactly; the envelope
    columns are mode-specific diagnostics (adaptive runs restart their window
    at every update) and are excluded by design.
    """
    cases = [
        ("test1", test1_runs["closed"][0][0], test1_runs["limit"][0]),
        ("test2", test2_runs["closed"][0], test2_runs["limit"][0]),
        ("test3", test3_runs["closed"][0], test3_runs["limit"][0]),
    ]
    for name, closed, limit in cases:
        assert limit.update_fraction == 1.0, name
        assert limit.cost_j == closed.cost_j, name
        np.testing.assert_array_equal(limit.trace.m1, closed.trace.m1, err_msg=name)
        np.testing.assert_array_equal(limit.trace.sigma2, closed.trace.sigma2, err_msg=name)
        np.testing.assert_array_equal(
            limit.trace.sigma2_lin, closed.trace.sigma2_lin, err_msg=name
        )
        np.testing.assert_array_equal(limit.trace.m1_lin, closed.trace.m1_lin, err_msg=name)
        np.testing.assert_array_equal(
            limit.trace.control_rms, closed.trace.control_rms, err_msg=name
        )
        np.testing.assert_array_equal(
            limit.trace.running_j, closed.trace.running_j, err_msg=name
        )
        assert np.array_equal(limit.final_m1, closed.final_m1)
    print("\nACCEPTANCE 08 tiny-delta closed-loop limit: PASS (bitwise, 3 tests)")


def test_09_subsampled_stepper_oracle():
    """Full-subsample MC stepping tracks the all-pairs stepper to 1e-12."""
    kern = kernels.bounded_confidence(10.0, 0.25)
    n = 64
    ens = ensemble.sample_initial(ensemble.uniform_interval(0.25, 1.75), n, 99, n - 1, 0.01)
    states = ens.v.copy()
    worst = 0.0
    for step in range(100):
        u = -0.5 * states  # an arbitrary but shared feedback
        ensemble.mfmc_step_first_order(ens, kern, 10.0, u)
        states = ensemble.microscopic_step_exact(states, kern, u, 0.01)
        worst = max(worst, float(np.max(np.abs(ens.v - states))))
        assert worst <= 1e-12, (step, worst)
        states = ens.v.copy()  # keep the controls shared next step
    print(f"\nACCEPTANCE 09 oracle stepping: PASS (max gap {worst:.1e})")


def test_10_jobs_determinism(tmp_path_factory):
    """Identical CSVs regardless of the sweep's --jobs parallelism."""
    cfg = cli.load_config(CONFIG_DIR / "test1.cfg")
    base = tmp_path_factory.mktemp("jobs")
    cli.run_sweep(cfg, [0.1], jobs=1, out_dir=base / "j1")
    cli.run_sweep(cfg, [0.1], jobs=2, out_dir=base / "j2")
    compared = 0
    for path in sorted((base / "j1").rglob("*")):
        if path.is_file():
            other = base / "j2" / path.relative_to(base / "j1")
            assert path.read_bytes() == other.read_bytes(), path.name
            compared += 1
    assert compared >= 7
    print(f"\nACCEPTANCE 10 jobs determinism: PASS ({compared} files compared)")
