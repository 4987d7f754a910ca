"""Particle ensembles: initial sampling and mean-field Monte Carlo stepping.

Every ensemble carries two coupled particle sets over the same sample index:
the nonlinear states ``v`` and a linear companion ``w`` that evolves under the
kernel frozen at its zero-distance value.  Both are advanced with explicit
Euler; the nonlinear interaction is estimated per particle from a random
subsample of partners, which keeps a step at O(n_samples * subsample) cost.

Randomness is counter-based: each step derives its generator from
(rng_seed, step_index) alone, so trajectories are reproducible bit for bit
and independent of how runs are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mdpc import kernels
from mdpc.errors import DivergenceError

UNIFORM_INTERVAL = "uniform_interval"
BIMODAL_GAUSSIAN_2D = "bimodal_gaussian_2d"
UNIFORM_DISC = "uniform_disc"

FIRST_ORDER = "first"
SECOND_ORDER = "second"


@dataclass(frozen=True)
class InitialDistribution:
    """Initial law of the particle states; ``params`` is kind-specific."""

    kind: str
    params: dict


def uniform_interval(lo: float, hi: float) -> InitialDistribution:
    if not lo < hi:
        raise ValueError("need lo < hi")
    return InitialDistribution(UNIFORM_INTERVAL, {"lo": float(lo), "hi": float(hi)})


def bimodal_gaussian_2d(
    sigma_x: float, sigma_v: float, mode_a: float, mode_b: float
) -> InitialDistribution:
    """Phase-space law for second-order runs: Gaussian positions centred at 0,
    velocities an equal-weight two-mode Gaussian mixture at mode_a and mode_b."""
    if sigma_x <= 0.0 or sigma_v <= 0.0:
        raise ValueError("sigma_x and sigma_v must be positive")
    return InitialDistribution(
        BIMODAL_GAUSSIAN_2D,
        {
            "sigma_x": float(sigma_x),
            "sigma_v": float(sigma_v),
            "mode_a": float(mode_a),
            "mode_b": float(mode_b),
        },
    )


def uniform_disc(center, radius: float) -> InitialDistribution:
    center = np.asarray(center, dtype=float)
    if center.shape != (2,):
        raise ValueError("center must be a 2-vector")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    return InitialDistribution(
        UNIFORM_DISC, {"center": tuple(center), "radius": float(radius)}
    )


def distribution_order(dist: InitialDistribution) -> str:
    return SECOND_ORDER if dist.kind == BIMODAL_GAUSSIAN_2D else FIRST_ORDER


def support_diameter(dist: InitialDistribution) -> float:
    """Diameter of the support, inf for distributions with unbounded support."""
    if dist.kind == UNIFORM_INTERVAL:
        return dist.params["hi"] - dist.params["lo"]
    if dist.kind == UNIFORM_DISC:
        return 2.0 * dist.params["radius"]
    return math.inf


@dataclass
class Ensemble:
    """Coupled particle states advanced in lockstep.

    ``v`` holds the nonlinear states (velocities for second order, with
    positions in ``x``), ``w`` the linear companion, and ``v0`` the reference
    copy used by the frozen-state control law.  ``step_index`` counts global
    Euler steps and keys the per-step random stream.
    """

    order: str
    dim: int
    v: np.ndarray
    w: np.ndarray
    v0: np.ndarray
    x: np.ndarray | None
    n_samples: int
    subsample_size: int
    dt: float
    step_index: int
    rng_seed: int

    def copy(self) -> "Ensemble":
        return Ensemble(
            order=self.order,
            dim=self.dim,
            v=self.v.copy(),
            w=self.w.copy(),
            v0=self.v0.copy(),
            x=None if self.x is None else self.x.copy(),
            n_samples=self.n_samples,
            subsample_size=self.subsample_size,
            dt=self.dt,
            step_index=self.step_index,
            rng_seed=self.rng_seed,
        )


def _generator(seed: int, spawn_key: tuple) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def init_rng(seed: int) -> np.random.Generator:
    return _generator(seed, (0,))


def step_rng(seed: int, step_index: int) -> np.random.Generator:
    return _generator(seed, (1, step_index))


def sample_initial(
    dist: InitialDistribution,
    n_samples: int,
    seed: int,
    subsample_size: int,
    dt: float,
) -> Ensemble:
    """Draw an i.i.d. ensemble and duplicate it into the linear companion."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if not 1 <= subsample_size <= n_samples - 1:
        raise ValueError("subsample_size must be in [1, n_samples - 1]")
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    rng = init_rng(seed)
    x = None
    p = dist.params
    if dist.kind == UNIFORM_INTERVAL:
        v = rng.uniform(p["lo"], p["hi"], size=(n_samples, 1))
        dim = 1
    elif dist.kind == BIMODAL_GAUSSIAN_2D:
        x = rng.normal(0.0, p["sigma_x"], size=(n_samples, 1))
        modes = np.array([p["mode_a"], p["mode_b"]])
        pick = rng.integers(0, 2, size=n_samples)
        v = modes[pick][:, None] + p["sigma_v"] * rng.standard_normal((n_samples, 1))
        dim = 1
    elif dist.kind == UNIFORM_DISC:
        r = p["radius"] * np.sqrt(rng.random(n_samples))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n_samples)
        v = np.asarray(p["center"]) + np.stack(
            [r * np.cos(theta), r * np.sin(theta)], axis=1
        )
        dim = 2
    else:
        raise ValueError(f"unknown distribution kind {dist.kind!r}")
    return Ensemble(
        order=distribution_order(dist),
        dim=dim,
        v=v,
        w=v.copy(),
        v0=v.copy(),
        x=x,
        n_samples=n_samples,
        subsample_size=subsample_size,
        dt=dt,
        step_index=0,
        rng_seed=seed,
    )


def empirical_moments(states) -> tuple[np.ndarray, float]:
    """Mean vector and total variance mean(|v - m1|^2), 1/n normalized."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    m1 = states.mean(axis=0)
    centered = states - m1
    sigma2 = float(np.mean(np.sum(centered * centered, axis=1)))
    return m1, sigma2


def sigma2_standard_error(states) -> float:
    """Monte Carlo standard error of the empirical total variance."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    q = np.sum((states - states.mean(axis=0)) ** 2, axis=1)
    var_q = max(float(np.mean(q * q) - np.mean(q) ** 2), 0.0)
    return math.sqrt(var_q / states.shape[0])


def sample_partners(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """(n, m) partner indices: per row, uniform without replacement from
    {0..n-1} minus the row index.

    m == n-1 returns the full complement deterministically.  Otherwise the
    draw is rejection-based (redraw rows containing duplicates), falling back
    to a dense key-sort when collisions would be too frequent.
    """
    if not 0 <= m <= n - 1:
        raise ValueError("need 0 <= m <= n - 1")
    if m == 0:
        return np.empty((n, 0), dtype=np.int64)
    rows = np.arange(n, dtype=np.int64)[:, None]
    if m == n - 1:
        base = np.broadcast_to(np.arange(n - 1, dtype=np.int64), (n, n - 1))
        return base + (base >= rows)
    log_clean = np.log1p(-np.arange(1, m) / (n - 1)).sum() if m > 1 else 0.0
    if log_clean > math.log(0.3):
        draws = rng.integers(0, n - 1, size=(n, m), dtype=np.int32)
        idx = draws + (draws >= rows).astype(np.int32)
        pending = np.arange(n, dtype=np.int64)
        while pending.size:
            srt = idx[pending]
            srt.sort(axis=1)
            pending = pending[(srt[:, 1:] == srt[:, :-1]).any(axis=1)]
            if pending.size:
                redraw = rng.integers(0, n - 1, size=(pending.size, m), dtype=np.int32)
                idx[pending] = redraw + (redraw >= pending[:, None]).astype(np.int32)
        return idx
    elif n <= 8192:
        keys = rng.random((n, n - 1))
        part = np.argpartition(keys, m - 1, axis=1)[:, :m].astype(np.int64)
        return part + (part >= rows)
    else:
        idx = np.empty((n, m), dtype=np.int64)
        for i in range(n):
            draw = rng.choice(n - 1, size=m, replace=False)
            idx[i] = draw + (draw >= i)
        return idx


def _subsampled_interaction(rng, kernel, anchors, values, m):
    """Kernel-averaged interaction from a random partner subsample.

    ``anchors`` feed the kernel distances (positions for second order), while
    ``values`` are what gets averaged (velocities).  Returns the per-particle
    kernel mean p_hat over the m partners and the kernel-weighted partner
    value mean v_hat, with v_hat falling back to the particle's own value
    where p_hat vanishes so the drift term cancels exactly.
    """
    n = anchors.shape[0]
    idx = sample_partners(rng, n, m)
    nbr_anchor = anchors[idx]
    diff = nbr_anchor - anchors[:, None, :]
    pij = kernels.evaluate_sqdist(kernel, np.sum(diff * diff, axis=-1))
    p_hat = pij.mean(axis=1)
    weighted = np.einsum("nm,nmd->nd", pij, values[idx]) / m
    safe = p_hat != 0.0
    denom = np.where(safe, p_hat, 1.0)[:, None]
    v_hat = np.where(safe[:, None], weighted / denom, values)
    return p_hat, v_hat


def _check_finite(ens: Ensemble, arrays) -> None:
    for arr in arrays:
        if arr is not None and not np.all(np.isfinite(arr)):
            raise DivergenceError(f"non-finite state after step {ens.step_index}")


def _companion_update(ens: Ensemble, p_bar: float, control: np.ndarray) -> np.ndarray:
    m1_w = ens.w.mean(axis=0)
    return (1.0 - ens.dt * p_bar) * ens.w + ens.dt * p_bar * m1_w + ens.dt * control


def mfmc_step_first_order(
    ens: Ensemble, kernel: kernels.KernelSpec, p_bar: float, control: np.ndarray
) -> Ensemble:
    """One explicit Euler step of the coupled nonlinear/linear pair.

    The nonlinear drift is the subsampled kernel average rescaled by
    (n-1)/n, which makes it unbiased for the all-pairs mean-field drift
    (1/n) * sum_j P(v_i, v_j)(v_j - v_i); with a full partner subsample the
    step reproduces the exact all-pairs stepper.  The control enters with the
    stabilizing sign on both systems.
    """
    if ens.order != FIRST_ORDER:
        raise ValueError("ensemble is not first order")
    control = np.asarray(control, dtype=float)
    if control.shape != ens.v.shape:
        raise ValueError("control shape must match the state array")
    n = ens.n_samples
    m = min(ens.subsample_size, n - 1)
    dt = ens.dt
    if m >= 1:
        rng = step_rng(ens.rng_seed, ens.step_index)
        p_hat, v_hat = _subsampled_interaction(rng, kernel, ens.v, ens.v, m)
        rate = (dt * (n - 1) / n) * p_hat[:, None]
        v_new = (1.0 - rate) * ens.v + rate * v_hat + dt * control
    else:
        v_new = ens.v + dt * control
    w_new = _companion_update(ens, p_bar, control)
    ens.v = v_new
    ens.w = w_new
    ens.step_index += 1
    _check_finite(ens, (ens.v, ens.w))
    return ens


POSITION_COUPLING = "position"
VELOCITY_COUPLING = "velocity"


def mfmc_step_second_order(
    ens: Ensemble,
    kernel: kernels.KernelSpec,
    p_bar: float,
    control: np.ndarray,
    coupling: str = POSITION_COUPLING,
) -> Ensemble:
    """Lie-split step: free transport of positions, then the velocity update.

    ``coupling`` selects which states feed the kernel distances: the
    transported positions (the canonical alignment model) or the velocities
    themselves (the scheme that alignment benchmarks in this family actually
    discretize; interaction then fades while velocities disagree and
    saturates as they align).  Control acts on velocities only.
    """
    if ens.order != SECOND_ORDER or ens.x is None:
        raise ValueError("ensemble is not second order")
    if coupling not in (POSITION_COUPLING, VELOCITY_COUPLING):
        raise ValueError(f"unknown coupling {coupling!r}")
    control = np.asarray(control, dtype=float)
    if control.shape != ens.v.shape:
        raise ValueError("control shape must match the state array")
    n = ens.n_samples
    m = min(ens.subsample_size, n - 1)
    dt = ens.dt
    x_new = ens.x + dt * ens.v
    if m >= 1 and n >= 2:
        rng = step_rng(ens.rng_seed, ens.step_index)
        anchors = x_new if coupling == POSITION_COUPLING else ens.v
        p_hat, v_hat = _subsampled_interaction(rng, kernel, anchors, ens.v, m)
        rate = (dt * (n - 1) / n) * p_hat[:, None]
        v_new = (1.0 - rate) * ens.v + rate * v_hat + dt * control
    else:
        v_new = ens.v + dt * control
    w_new = _companion_update(ens, p_bar, control)
    ens.x = x_new
    ens.v = v_new
    ens.w = w_new
    ens.step_index += 1
    _check_finite(ens, (ens.v, ens.w, ens.x))
    return ens


def microscopic_step_exact(states, kernel: kernels.KernelSpec, control, dt: float):
    """Explicit Euler step of the all-pairs dynamics
    v_i' = (1/n) sum_j P(v_i, v_j)(v_j - v_i) + u_i.  O(n^2), small n only."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    n = states.shape[0]
    if n > 1000:
        raise ValueError("all-pairs stepper is limited to 1000 agents")
    control = np.broadcast_to(np.asarray(control, dtype=float), states.shape)
    diff = states[None, :, :] - states[:, None, :]
    pij = kernels.evaluate_sqdist(kernel, np.sum(diff * diff, axis=-1))
    drift = np.einsum("ij,ijd->id", pij, diff) / n
    new = states + dt * (drift + control)
    if not np.all(np.isfinite(new)):
        raise DivergenceError("non-finite state in all-pairs step")
    return new
