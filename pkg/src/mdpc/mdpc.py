"""Event-triggered run orchestration.

A run advances the coupled ensemble over the full horizon under one of five
modes.  The two adaptive modes re-synchronize their feedback state whenever an
analytic moment-decay gap, measured from the last synchronization, crosses its
tolerance:

* ``sigma``      -- open-loop feedback; the variance-envelope gap resets the
                    linear companion (w <- v),
* ``mean_sigma`` -- frozen-state feedback; the variance gap (beta-free law) or
                    the mean-contraction gap refreezes the reference state
                    (v0 <- v, and w is re-synchronized alongside).

The three baselines never trigger: ``closed`` applies the measured-state
feedback every step (and keeps w identical to v, which is exactly the
delta -> 0 limit of ``sigma``), ``open`` never resets the companion, and
``inexact`` keeps the initial reference frozen for the whole horizon.

Gains are solved once on [0, T]; triggers only re-index into that solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mdpc import bounds, control, ensemble
from mdpc.bounds import BoundContext
from mdpc.kernels import KernelSpec
from mdpc.riccati import RiccatiSolution

MODE_SIGMA = "sigma"
MODE_MEAN_SIGMA = "mean_sigma"
MODE_CLOSED = "closed"
MODE_OPEN = "open"
MODE_INEXACT = "inexact"

RUN_MODES = (MODE_SIGMA, MODE_MEAN_SIGMA, MODE_CLOSED, MODE_OPEN, MODE_INEXACT)

CAUSE_VARIANCE = "variance_gap"
CAUSE_MEAN = "mean_drift"

# Feedback state and envelope law used by each mode.
_CONTROL_KIND = {
    MODE_SIGMA: control.OPEN_LOOP,
    MODE_MEAN_SIGMA: control.INEXACT_OPEN_LOOP,
    MODE_CLOSED: control.CLOSED_LOOP,
    MODE_OPEN: control.OPEN_LOOP,
    MODE_INEXACT: control.INEXACT_OPEN_LOOP,
}
_ENVELOPE_LAW = {
    MODE_SIGMA: bounds.OPEN_LOOP_LAW,
    MODE_MEAN_SIGMA: bounds.INEXACT_LAW,
    MODE_CLOSED: bounds.CLOSED_LOOP_LAW,
    MODE_OPEN: bounds.OPEN_LOOP_LAW,
    MODE_INEXACT: bounds.INEXACT_LAW,
}


@dataclass(frozen=True)
class MdpcConfig:
    mode: str
    delta: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ValueError(f"unknown run mode {self.mode!r}")
        if self.mode in (MODE_SIGMA, MODE_MEAN_SIGMA):
            if self.delta is None or self.delta <= 0.0:
                raise ValueError("adaptive modes need delta > 0")
        if self.mode == MODE_MEAN_SIGMA:
            if self.tau is None or self.tau <= 0.0:
                raise ValueError("mean_sigma needs tau > 0")
        elif self.tau is not None:
            raise ValueError("tau is only meaningful for mode mean_sigma")


@dataclass(frozen=True)
class ExperimentBundle:
    """Everything one run needs, assembled once so sweeps can share it."""

    kernel: KernelSpec
    p_bar: float
    ric: RiccatiSolution
    ctx: BoundContext
    ensemble: ensemble.Ensemble
    nu: float
    dt: float
    horizon: float
    target: np.ndarray
    coupling: str = ensemble.POSITION_COUPLING


@dataclass
class MomentTrace:
    """Per-step time series; rows align with the gain grid (n_steps + 1)."""

    t: np.ndarray
    m1: np.ndarray
    sigma2: np.ndarray
    m1_lin: np.ndarray
    sigma2_lin: np.ndarray
    sigma2_se: np.ndarray
    bound_lower: np.ndarray
    bound_upper: np.ndarray
    delta_sigma: np.ndarray
    delta_m: np.ndarray
    control_rms: np.ndarray
    running_j: np.ndarray


@dataclass
class MdpcRun:
    update_times: list[float]
    update_causes: list[str]
    trace: MomentTrace
    final_m1: np.ndarray
    final_sigma2: float
    cost_j: float
    update_fraction: float
    n_steps: int
    snapshots: list = field(default_factory=list)


def next_trigger_sigma(
    ctx: BoundContext, sigma2_tk: float, t_k: float, delta: float
) -> float | None:
    """First grid time strictly after t_k where the open-loop variance gap
    exceeds delta, or None when the gap stays within tolerance up to T."""
    j = _trigger_index_sigma(ctx, sigma2_tk, ctx.ric.index_of(t_k), delta, bounds.OPEN_LOOP_LAW)
    return None if j is None else float(ctx.ric.t[j])


def next_trigger_mean_sigma(
    ctx: BoundContext, sigma2_tk: float, t_k: float, delta: float, tau: float
) -> tuple[float | None, str | None]:
    """Earlier of the variance trigger (beta-free law) and the mean trigger;
    ties resolve to the variance cause."""
    i_k = ctx.ric.index_of(t_k)
    j, cause = _trigger_index_mean_sigma(ctx, sigma2_tk, i_k, delta, tau)
    return (None, None) if j is None else (float(ctx.ric.t[j]), cause)


def _first_exceed(profile: np.ndarray, threshold: float, i0: int) -> int | None:
    # profile[k] sits at grid index i0 + k; the window start itself never counts.
    hits = np.flatnonzero(profile[1:] > threshold)
    return None if hits.size == 0 else i0 + 1 + int(hits[0])


def _trigger_index_sigma(ctx, sigma2_tk, i_k, delta, law) -> int | None:
    profile = bounds.delta_sigma_profile(ctx, sigma2_tk, i_k, law)
    return _first_exceed(profile, delta, i_k)


def _trigger_index_mean_sigma(ctx, sigma2_tk, i_k, delta, tau):
    j_sigma = _trigger_index_sigma(ctx, sigma2_tk, i_k, delta, bounds.INEXACT_LAW)
    j_mean = _first_exceed(bounds.delta_m_profile(ctx, i_k), tau, i_k)
    if j_sigma is None and j_mean is None:
        return None, None
    if j_mean is None or (j_sigma is not None and j_sigma <= j_mean):
        return j_sigma, CAUSE_VARIANCE
    return j_mean, CAUSE_MEAN


def run_mdpc(
    cfg: MdpcConfig, bundle: ExperimentBundle, snapshot_stride: int = 0
) -> MdpcRun:
    """Execute one full-horizon run and record its per-step trace.

    The loop measures the nonlinear ensemble at every synchronization time,
    searches the gap profiles for the next trigger, and evolves the coupled
    dynamics in between; cost accumulates every step, including the terminal
    state term where the gains (hence the control) vanish identically.
    """
    ric = bundle.ric
    ctx = bundle.ctx
    ens = bundle.ensemble.copy()
    n_steps = len(ric.t) - 1
    mode = cfg.mode
    law = _ENVELOPE_LAW[mode]
    ctrl = control.ControlMode(_CONTROL_KIND[mode], bundle.target)
    adaptive = mode in (MODE_SIGMA, MODE_MEAN_SIGMA)

    tr = MomentTrace(
        t=ric.t.copy(),
        m1=np.empty((n_steps + 1, ens.dim)),
        sigma2=np.empty(n_steps + 1),
        m1_lin=np.empty((n_steps + 1, ens.dim)),
        sigma2_lin=np.empty(n_steps + 1),
        sigma2_se=np.empty(n_steps + 1),
        bound_lower=np.empty(n_steps + 1),
        bound_upper=np.empty(n_steps + 1),
        delta_sigma=np.empty(n_steps + 1),
        delta_m=np.empty(n_steps + 1),
        control_rms=np.empty(n_steps + 1),
        running_j=np.empty(n_steps + 1),
    )
    acc = control.CostAccumulator(nu=bundle.nu, dt=bundle.dt, target=ctrl.target)
    update_times: list[float] = []
    update_causes: list[str] = []
    snapshots: list = []

    def window_profiles(i_k: int, sigma2_k: float):
        lower, upper = bounds.envelope_profiles(ctx, sigma2_k, i_k, law)
        if law == bounds.CLOSED_LOOP_LAW:
            gap = upper - lower
        else:
            gap = bounds.delta_sigma_profile(ctx, sigma2_k, i_k, law)
        return lower, upper, gap, bounds.delta_m_profile(ctx, i_k)

    i_k = 0
    _, sigma2_k = ensemble.empirical_moments(ens.v)
    low_prof, up_prof, gap_prof, dm_prof = window_profiles(i_k, sigma2_k)
    trigger_at: int | None = None
    cause: str | None = None
    if adaptive:
        if mode == MODE_SIGMA:
            trigger_at = _trigger_index_sigma(ctx, sigma2_k, i_k, cfg.delta, law)
            cause = CAUSE_VARIANCE
        else:
            trigger_at, cause = _trigger_index_mean_sigma(ctx, sigma2_k, i_k, cfg.delta, cfg.tau)

    for n in range(n_steps + 1):
        if adaptive and trigger_at == n:
            ens.w = ens.v.copy()
            if mode == MODE_MEAN_SIGMA:
                ens.v0 = ens.v.copy()
            update_times.append(float(ric.t[n]))
            update_causes.append(cause)
            i_k = n
            _, sigma2_k = ensemble.empirical_moments(ens.v)
            low_prof, up_prof, gap_prof, dm_prof = window_profiles(i_k, sigma2_k)
            if mode == MODE_SIGMA:
                trigger_at = _trigger_index_sigma(ctx, sigma2_k, i_k, cfg.delta, law)
                cause = CAUSE_VARIANCE
            else:
                trigger_at, cause = _trigger_index_mean_sigma(
                    ctx, sigma2_k, i_k, cfg.delta, cfg.tau
                )
        if mode == MODE_CLOSED:
            # The per-step synchronization limit: the companion is the state.
            ens.w = ens.v.copy()

        u = control.evaluate_control(ctrl, ens, ric, n)
        control.accumulate_cost(acc, ens.v, u)

        m1, sigma2 = ensemble.empirical_moments(ens.v)
        m1_lin, sigma2_lin = ensemble.empirical_moments(ens.w)
        k = n - i_k
        tr.m1[n] = m1
        tr.sigma2[n] = sigma2
        tr.m1_lin[n] = m1_lin
        tr.sigma2_lin[n] = sigma2_lin
        tr.sigma2_se[n] = ensemble.sigma2_standard_error(ens.v)
        tr.bound_lower[n] = low_prof[k]
        tr.bound_upper[n] = up_prof[k]
        tr.delta_sigma[n] = gap_prof[k]
        tr.delta_m[n] = dm_prof[k]
        tr.control_rms[n] = float(np.sqrt(np.mean(np.sum(u * u, axis=1))))
        tr.running_j[n] = acc.running_j
        if snapshot_stride > 0 and (n % snapshot_stride == 0 or n == n_steps):
            snapshots.append((n, ens.v.copy(), None if ens.x is None else ens.x.copy()))

        if n < n_steps:
            if ens.order == ensemble.SECOND_ORDER:
                ensemble.mfmc_step_second_order(
                    ens, bundle.kernel, bundle.p_bar, u, coupling=bundle.coupling
                )
            else:
                ensemble.mfmc_step_first_order(ens, bundle.kernel, bundle.p_bar, u)

    return MdpcRun(
        update_times=update_times,
        update_causes=update_causes,
        trace=tr,
        final_m1=tr.m1[-1].copy(),
        final_sigma2=float(tr.sigma2[-1]),
        cost_j=acc.running_j,
        update_fraction=len(update_times) / n_steps,
        n_steps=n_steps,
        snapshots=snapshots,
    )
