"""Experiment runner: flat key-value configs, CSV outputs, delta sweeps.

Config files hold one ``key = value`` pair per line with ``#`` comments.
Unknown keys are rejected so a config is always a complete, diffable record
of what ran.  Every output file starts with a schema-version comment line.

CLI verbs:
  run <config>      execute one experiment, write moments/updates/summary
  sweep <config>    matched-seed runs over a delta list plus the closed-loop
                    baseline, write sweep.csv alongside per-run directories
  riccati <config>  dump the gain trajectories only
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mdpc import bounds, control, ensemble, kernels, mdpc, riccati
from mdpc.errors import ConfigError, DivergenceError

MOMENTS_SCHEMA = "# mdpc-moments v1"
UPDATES_SCHEMA = "# mdpc-updates v1"
SNAPSHOTS_SCHEMA = "# mdpc-snapshots v1"
MICRO_SCHEMA = "# mdpc-micro v1"
RICCATI_SCHEMA = "# mdpc-riccati v1"
SWEEP_SCHEMA = "# mdpc-sweep v1"

# Margin applied to the initial support diameter when certifying kernel
# bounds for kernels that are unbounded at large distances.
DOMAIN_SAFETY = 1.2

_MANDATORY_KEYS = (
    "name",
    "seed",
    "kernel",
    "order",
    "initial",
    "n_samples",
    "subsample",
    "dt",
    "nu",
    "horizon",
    "mode",
)

_KERNEL_PARAM_KEYS = {
    kernels.BOUNDED_CONFIDENCE: ("kernel_strength", "kernel_radius"),
    kernels.CUCKER_SMALE: (
        "kernel_offset",
        "kernel_scale",
        "kernel_softening",
        "kernel_exponent",
    ),
    kernels.ATTRACTION_REPULSION: ("kernel_attract_power", "kernel_repel_power"),
}

_INITIAL_PARAM_KEYS = {
    ensemble.UNIFORM_INTERVAL: ("initial_lo", "initial_hi"),
    ensemble.BIMODAL_GAUSSIAN_2D: (
        "initial_sigma_x",
        "initial_sigma_v",
        "initial_mode_a",
        "initial_mode_b",
    ),
    ensemble.UNIFORM_DISC: ("initial_center_x", "initial_center_y", "initial_radius"),
}

_OPTIONAL_KEYS = (
    "delta",
    "tau",
    "p_bar",
    "target",
    "coupling",
    "output_dir",
    "snapshot_stride",
    "microscopic_n",
    "riccati_substeps",
)

_ALL_KEYS = (
    set(_MANDATORY_KEYS)
    | set(_OPTIONAL_KEYS)
    | {k for keys in _KERNEL_PARAM_KEYS.values() for k in keys}
    | {k for keys in _INITIAL_PARAM_KEYS.values() for k in keys}
)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    kernel_kind: str
    kernel_params: dict
    order: str
    initial_kind: str
    initial_params: dict
    n_samples: int
    subsample: int
    dt: float
    nu: float
    horizon: float
    mode: str
    delta: float | None = None
    tau: float | None = None
    p_bar: float | None = None
    target: tuple = ()
    coupling: str = ensemble.POSITION_COUPLING
    output_dir: str | None = None
    snapshot_stride: int = 0
    microscopic_n: int = 0
    riccati_substeps: int = 8


def load_config(path) -> ExperimentConfig:
    """Parse and validate a flat key-value experiment config."""
    path = Path(path)
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
        raw[key] = value

    missing = [k for k in _MANDATORY_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"{path}: missing mandatory keys: {', '.join(missing)}")

    def take_float(key):
        try:
            return float(raw[key])
        except ValueError as exc:
            raise ConfigError(f"{path}: key {key!r} is not a number") from exc

    def take_int(key):
        try:
            return int(raw[key])
        except ValueError as exc:
            raise ConfigError(f"{path}: key {key!r} is not an integer") from exc

    kernel_kind = raw["kernel"]
    if kernel_kind not in _KERNEL_PARAM_KEYS:
        raise ConfigError(f"{path}: unknown kernel {kernel_kind!r}")
    initial_kind = raw["initial"]
    if initial_kind not in _INITIAL_PARAM_KEYS:
        raise ConfigError(f"{path}: unknown initial distribution {initial_kind!r}")
    mode = raw["mode"]
    if mode not in mdpc.RUN_MODES:
        raise ConfigError(f"{path}: unknown mode {mode!r}")
    order = raw["order"]
    if order not in (ensemble.FIRST_ORDER, ensemble.SECOND_ORDER):
        raise ConfigError(f"{path}: order must be 'first' or 'second'")

    for group, kind in ((_KERNEL_PARAM_KEYS, kernel_kind), (_INITIAL_PARAM_KEYS, initial_kind)):
        needed = [k for k in group[kind] if k not in raw]
        if needed:
            raise ConfigError(f"{path}: {kind} needs keys: {', '.join(needed)}")

    kernel_params = {k: take_float(k) for k in _KERNEL_PARAM_KEYS[kernel_kind]}
    initial_params = {k: take_float(k) for k in _INITIAL_PARAM_KEYS[initial_kind]}

    delta = take_float("delta") if "delta" in raw else None
    tau = take_float("tau") if "tau" in raw else None
    if mode in (mdpc.MODE_SIGMA, mdpc.MODE_MEAN_SIGMA) and delta is None:
        raise ConfigError(f"{path}: mode {mode!r} needs delta")
    if mode == mdpc.MODE_MEAN_SIGMA and tau is None:
        raise ConfigError(f"{path}: mode mean_sigma needs tau")
    if mode != mdpc.MODE_MEAN_SIGMA and tau is not None:
        raise ConfigError(f"{path}: tau is only valid with mode mean_sigma")

    target: tuple = ()
    if "target" in raw:
        try:
            target = tuple(float(part) for part in raw["target"].split(","))
        except ValueError as exc:
            raise ConfigError(f"{path}: target must be comma-separated numbers") from exc

    cfg = ExperimentConfig(
        name=raw["name"],
        seed=take_int("seed"),
        kernel_kind=kernel_kind,
        kernel_params=kernel_params,
        order=order,
        initial_kind=initial_kind,
        initial_params=initial_params,
        n_samples=take_int("n_samples"),
        subsample=take_int("subsample"),
        dt=take_float("dt"),
        nu=take_float("nu"),
        horizon=take_float("horizon"),
        mode=mode,
        delta=delta,
        tau=tau,
        p_bar=take_float("p_bar") if "p_bar" in raw else None,
        target=target,
        coupling=raw.get("coupling", ensemble.POSITION_COUPLING),
        output_dir=raw.get("output_dir"),
        snapshot_stride=take_int("snapshot_stride") if "snapshot_stride" in raw else 0,
        microscopic_n=take_int("microscopic_n") if "microscopic_n" in raw else 0,
        riccati_substeps=take_int("riccati_substeps") if "riccati_substeps" in raw else 8,
    )
    _validate(cfg, path)
    return cfg


def _validate(cfg: ExperimentConfig, path) -> None:
    if cfg.seed < 0:
        raise ConfigError(f"{path}: seed must be nonnegative")
    if cfg.n_samples < 2:
        raise ConfigError(f"{path}: n_samples must be at least 2")
    if not 1 <= cfg.subsample <= cfg.n_samples - 1:
        raise ConfigError(f"{path}: subsample must lie in [1, n_samples - 1]")
    for key in ("dt", "nu", "horizon"):
        if getattr(cfg, key) <= 0.0:
            raise ConfigError(f"{path}: {key} must be positive")
    dist = _make_initial(cfg)
    if ensemble.distribution_order(dist) != cfg.order:
        raise ConfigError(
            f"{path}: initial distribution {cfg.initial_kind!r} implies order "
            f"{ensemble.distribution_order(dist)!r}"
        )
    if cfg.snapshot_stride < 0 or cfg.microscopic_n < 0:
        raise ConfigError(f"{path}: strides and agent counts must be nonnegative")
    if cfg.microscopic_n == 1:
        raise ConfigError(f"{path}: microscopic_n must be 0 or at least 2")
    if cfg.coupling not in (ensemble.POSITION_COUPLING, ensemble.VELOCITY_COUPLING):
        raise ConfigError(f"{path}: coupling must be 'position' or 'velocity'")
    if cfg.coupling == ensemble.VELOCITY_COUPLING and cfg.order != ensemble.SECOND_ORDER:
        raise ConfigError(f"{path}: coupling only applies to second-order runs")


def _make_kernel(cfg: ExperimentConfig, domain_radius: float) -> kernels.KernelSpec:
    p = cfg.kernel_params
    if cfg.kernel_kind == kernels.BOUNDED_CONFIDENCE:
        return kernels.bounded_confidence(p["kernel_strength"], p["kernel_radius"])
    if cfg.kernel_kind == kernels.CUCKER_SMALE:
        return kernels.cucker_smale(
            p["kernel_offset"],
            p["kernel_scale"],
            p["kernel_softening"],
            p["kernel_exponent"],
            domain_radius,
        )
    return kernels.attraction_repulsion(
        p["kernel_attract_power"], p["kernel_repel_power"], domain_radius
    )


def _make_initial(cfg: ExperimentConfig) -> ensemble.InitialDistribution:
    p = cfg.initial_params
    if cfg.initial_kind == ensemble.UNIFORM_INTERVAL:
        return ensemble.uniform_interval(p["initial_lo"], p["initial_hi"])
    if cfg.initial_kind == ensemble.BIMODAL_GAUSSIAN_2D:
        return ensemble.bimodal_gaussian_2d(
            p["initial_sigma_x"], p["initial_sigma_v"], p["initial_mode_a"], p["initial_mode_b"]
        )
    return ensemble.uniform_disc(
        (p["initial_center_x"], p["initial_center_y"]), p["initial_radius"]
    )


def build_bundle(cfg: ExperimentConfig) -> mdpc.ExperimentBundle:
    """Assemble kernel, gains, bounds and the initial ensemble for one run."""
    dist = _make_initial(cfg)
    diameter = ensemble.support_diameter(dist)
    domain_radius = DOMAIN_SAFETY * diameter if math.isfinite(diameter) else math.inf
    kernel = _make_kernel(cfg, domain_radius)
    p_bar = cfg.p_bar if cfg.p_bar is not None else kernels.linearization_coefficient(kernel)
    ric = riccati.solve_limit(
        riccati.RiccatiConfig(
            p_bar=p_bar,
            nu=cfg.nu,
            horizon=cfg.horizon,
            dt=cfg.dt,
            substeps=cfg.riccati_substeps,
        )
    )
    ens = ensemble.sample_initial(dist, cfg.n_samples, cfg.seed, cfg.subsample, cfg.dt)
    ctx = bounds.make_context(ric, kernel.lower_a, kernel.upper_b)
    target = np.zeros(ens.dim) if not cfg.target else np.asarray(cfg.target, dtype=float)
    if target.shape != (ens.dim,):
        raise ConfigError(f"target must have {ens.dim} component(s)")
    return mdpc.ExperimentBundle(
        kernel=kernel,
        p_bar=p_bar,
        ric=ric,
        ctx=ctx,
        ensemble=ens,
        nu=cfg.nu,
        dt=cfg.dt,
        horizon=cfg.horizon,
        target=target,
        coupling=cfg.coupling,
    )


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> mdpc.MdpcRun:
    """Full pipeline: sample, solve gains, run, write artifacts."""
    bundle = build_bundle(cfg)
    run_cfg = mdpc.MdpcConfig(mode=cfg.mode, delta=cfg.delta, tau=cfg.tau)
    run = mdpc.run_mdpc(run_cfg, bundle, snapshot_stride=cfg.snapshot_stride)
    out = Path(out_dir) if out_dir is not None else _default_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_moments_csv(out / "moments.csv", run)
    write_updates_csv(out / "updates.csv", run)
    write_summary(out / "summary.txt", cfg, run)
    if cfg.snapshot_stride > 0:
        write_snapshots_csv(out / "snapshots.csv", cfg, run)
    if cfg.microscopic_n > 0:
        write_micro_csv(out / "micro.csv", cfg, bundle)
    return run


def run_sweep(cfg: ExperimentConfig, deltas, jobs: int = 1, out_dir=None):
    """Matched-seed runs per delta plus the closed-loop baseline."""
    if cfg.mode not in (mdpc.MODE_SIGMA, mdpc.MODE_MEAN_SIGMA):
        raise ConfigError("sweep needs an adaptive mode (sigma or mean_sigma)")
    out = Path(out_dir) if out_dir is not None else _default_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [
        (f"delta_{d:g}", dataclasses.replace(cfg, delta=float(d))) for d in deltas
    ]
    tasks.append(
        ("closed_loop", dataclasses.replace(cfg, mode=mdpc.MODE_CLOSED, delta=None, tau=None))
    )

    def execute(task):
        label, task_cfg = task
        return run_experiment(task_cfg, out / label)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(execute, tasks))
    else:
        runs = [execute(task) for task in tasks]

    with open(out / "sweep.csv", "w") as fh:
        fh.write(SWEEP_SCHEMA + "\n")
        fh.write("delta,update_fraction,final_sigma2,cost_J\n")
        for (label, task_cfg), run in zip(tasks, runs):
            delta_field = _fmt(task_cfg.delta) if label != "closed_loop" else "closed"
            fh.write(
                f"{delta_field},{_fmt(run.update_fraction)},"
                f"{_fmt(run.final_sigma2)},{_fmt(run.cost_j)}\n"
            )
    return runs


def _default_out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) if cfg.output_dir else Path("out") / cfg.name


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_moments_csv(path, run: mdpc.MdpcRun) -> None:
    tr = run.trace
    dim = tr.m1.shape[1]
    cols = ["t"] + [f"m1_{d}" for d in range(dim)] + [
        "sigma2",
    ] + [f"m1_lin_{d}" for d in range(dim)] + [
        "sigma2_lin",
        "sigma2_se",
        "bound_lower",
        "bound_upper",
        "delta_sigma",
        "delta_m",
        "control_rms",
        "running_J",
    ]
    with open(path, "w") as fh:
        fh.write(MOMENTS_SCHEMA + "\n")
        fh.write(",".join(cols) + "\n")
        for n in range(len(tr.t)):
            row = [tr.t[n], *tr.m1[n], tr.sigma2[n], *tr.m1_lin[n], tr.sigma2_lin[n],
                   tr.sigma2_se[n], tr.bound_lower[n], tr.bound_upper[n], tr.delta_sigma[n],
                   tr.delta_m[n], tr.control_rms[n], tr.running_j[n]]
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_updates_csv(path, run: mdpc.MdpcRun) -> None:
    with open(path, "w") as fh:
        fh.write(UPDATES_SCHEMA + "\n")
        fh.write("t,cause\n")
        for t, cause in zip(run.update_times, run.update_causes):
            fh.write(f"{_fmt(t)},{cause}\n")


def write_summary(path, cfg: ExperimentConfig, run: mdpc.MdpcRun) -> None:
    lines = [
        f"name = {cfg.name}",
        f"mode = {cfg.mode}",
        f"delta = {_fmt(cfg.delta) if cfg.delta is not None else 'none'}",
        f"tau = {_fmt(cfg.tau) if cfg.tau is not None else 'none'}",
        f"seed = {cfg.seed}",
        f"n_steps = {run.n_steps}",
        f"update_count = {len(run.update_times)}",
        f"update_fraction = {_fmt(run.update_fraction)}",
        f"final_sigma2 = {_fmt(run.final_sigma2)}",
        f"final_m1 = {','.join(_fmt(x) for x in run.final_m1)}",
        f"cost_J = {_fmt(run.cost_j)}",
        f"update_times = {','.join(_fmt(t) for t in run.update_times)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def write_snapshots_csv(path, cfg: ExperimentConfig, run: mdpc.MdpcRun) -> None:
    with open(path, "w") as fh:
        fh.write(SNAPSHOTS_SCHEMA + "\n")
        dim = run.trace.m1.shape[1]
        cols = ["step", "t", "particle"] + [f"v_{d}" for d in range(dim)]
        has_x = run.snapshots and run.snapshots[0][2] is not None
        if has_x:
            cols += [f"x_{d}" for d in range(dim)]
        fh.write(",".join(cols) + "\n")
        for step, v, x in run.snapshots:
            t = step * cfg.dt
            for i in range(v.shape[0]):
                row = [step, _fmt(t), i] + [_fmt(c) for c in v[i]]
                if has_x:
                    row += [_fmt(c) for c in x[i]]
                fh.write(",".join(str(c) for c in row) + "\n")


def write_micro_csv(path, cfg: ExperimentConfig, bundle: mdpc.ExperimentBundle) -> None:
    """Small-population all-pairs comparison run under closed-loop feedback."""
    states, positions = _sample_micro(cfg)
    ric_n = riccati.solve_scaled_finite_n(
        riccati.RiccatiConfig(
            p_bar=bundle.p_bar,
            nu=cfg.nu,
            horizon=cfg.horizon,
            dt=cfg.dt,
            n_agents=cfg.microscopic_n,
            substeps=cfg.riccati_substeps,
        )
    )
    target = bundle.target
    n_steps = len(ric_n.t) - 1
    with open(path, "w") as fh:
        fh.write(MICRO_SCHEMA + "\n")
        dim = states.shape[1]
        cols = ["step", "t", "agent"] + [f"v_{d}" for d in range(dim)]
        if positions is not None:
            cols += [f"x_{d}" for d in range(dim)]
        fh.write(",".join(cols) + "\n")

        def emit(step):
            for i in range(states.shape[0]):
                row = [str(step), _fmt(step * cfg.dt), str(i)]
                row += [_fmt(c) for c in states[i]]
                if positions is not None:
                    row += [_fmt(c) for c in positions[i]]
                fh.write(",".join(row) + "\n")

        emit(0)
        for n in range(n_steps):
            u = control.evaluate_control_microscopic(states, ric_n, n, target)
            if positions is None:
                states = ensemble.microscopic_step_exact(states, bundle.kernel, u, cfg.dt)
            else:
                positions = positions + cfg.dt * states
                anchors = (
                    positions if bundle.coupling == ensemble.POSITION_COUPLING else states
                )
                diff = states[None, :, :] - states[:, None, :]
                gaps = anchors[None, :, :] - anchors[:, None, :]
                pij = kernels.evaluate_sqdist(bundle.kernel, np.sum(gaps * gaps, axis=-1))
                drift = np.einsum("ij,ijd->id", pij, diff) / states.shape[0]
                states = states + cfg.dt * (drift + u)
            emit(n + 1)


def _sample_micro(cfg: ExperimentConfig):
    dist = _make_initial(cfg)
    micro = ensemble.sample_initial(
        dist,
        cfg.microscopic_n,
        cfg.seed,
        max(1, min(cfg.subsample, cfg.microscopic_n - 1)),
        cfg.dt,
    )
    return micro.v, micro.x


def write_riccati_csv(path, sol: riccati.RiccatiSolution) -> None:
    with open(path, "w") as fh:
        fh.write(RICCATI_SCHEMA + "\n")
        fh.write("t,kd,ko,s,kd_cumint,kdko_cumint\n")
        for j in range(len(sol.t)):
            row = (sol.t[j], sol.kd[j], sol.ko[j], sol.s[j], sol.kd_cumint[j], sol.kdko_cumint[j])
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mdpc", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--jobs", type=int, default=1, help="accepted for interface parity")

    p_sweep = sub.add_parser("sweep", help="run a delta sweep plus closed-loop baseline")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--deltas", required=True, help="comma-separated delta values")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--out", default=None)

    p_ric = sub.add_parser("riccati", help="dump the gain trajectories")
    p_ric.add_argument("config")
    p_ric.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.verb == "run":
            run = run_experiment(cfg, args.out)
            print(
                f"{cfg.name}: mode={cfg.mode} J={run.cost_j:.6g} "
                f"sigma2(T)={run.final_sigma2:.6g} updates={len(run.update_times)}"
                f"/{run.n_steps}"
            )
        elif args.verb == "sweep":
            deltas = [float(part) for part in args.deltas.split(",") if part]
            if not deltas:
                raise ConfigError("--deltas needs at least one value")
            runs = run_sweep(cfg, deltas, jobs=max(1, args.jobs), out_dir=args.out)
            for d, run in zip(deltas, runs):
                print(
                    f"{cfg.name}: delta={d:g} J={run.cost_j:.6g} "
                    f"updates={len(run.update_times)}/{run.n_steps}"
                )
            print(f"{cfg.name}: closed-loop J={runs[-1].cost_j:.6g}")
        else:
            bundle = build_bundle(cfg)
            out = Path(args.out) if args.out else _default_out(cfg)
            out.mkdir(parents=True, exist_ok=True)
            write_riccati_csv(out / "riccati.csv", bundle.ric)
            print(f"{cfg.name}: wrote {out / 'riccati.csv'}")
    except (ConfigError, DivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
