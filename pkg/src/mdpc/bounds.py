"""Analytic moment-decay envelopes and the update-trigger gap functions.

Everything here is pure quadrature over a precomputed gain trajectory.  For a
window starting at t0, the linear-companion damping factor is

    beta(t0, t) = exp(-2 p_bar (t - t0) - (1/nu) * int_{t0}^{t} kd)

and the envelope ingredients are the weighted gain integrals

    B(c, +/-1) = (1/nu) * int_{t0}^{t} beta(t0, s) kd(s) exp(+/- c (s - t0)) ds,

computed with the trapezoid rule on the solution grid (the inexact law drops
beta).  Variance envelopes combine these with the kernel range [-a, b]; the
lower envelope is clamped at zero once 1 - B crosses its first root, where
the comparison argument stops being valid.

All window functions accept on-grid times; ``*_profile`` variants return the
whole remaining grid at once, which is what the trigger search and the
per-step traces consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mdpc.riccati import RiccatiSolution

OPEN_LOOP_LAW = "open"
INEXACT_LAW = "inexact"
CLOSED_LOOP_LAW = "closed"

ENVELOPE_LAWS = (OPEN_LOOP_LAW, INEXACT_LAW, CLOSED_LOOP_LAW)


@dataclass(frozen=True)
class BoundContext:
    """Gain trajectory plus the kernel range and penalty entering the bounds."""

    ric: RiccatiSolution
    kernel_a: float
    kernel_b: float
    p_bar: float
    nu: float

    def __post_init__(self):
        if self.kernel_a < 0.0 or self.kernel_b < 0.0:
            raise ValueError("kernel range bounds must be nonnegative")


def make_context(ric: RiccatiSolution, kernel_a: float, kernel_b: float) -> BoundContext:
    return BoundContext(ric=ric, kernel_a=kernel_a, kernel_b=kernel_b, p_bar=ric.p_bar, nu=ric.nu)


def mean_decay_open_loop(m1_0, ctx: BoundContext, t0: float, t: float):
    """Exponential mean contraction exp(-(1/nu) int (kd+ko)) applied to m1_0."""
    i0, i1 = _window(ctx, t0, t)
    integral = ctx.ric.kdko_cumint[i1] - ctx.ric.kdko_cumint[i0]
    return np.asarray(m1_0, dtype=float) * np.exp(-integral / ctx.nu)


def mean_decay_inexact(m1_0, ctx: BoundContext, t0: float, t: float):
    """Affine mean factor 1 - (1/nu) int (kd+ko); crosses zero and reverses
    sign once the gain integral exceeds nu."""
    i0, i1 = _window(ctx, t0, t)
    integral = ctx.ric.kdko_cumint[i1] - ctx.ric.kdko_cumint[i0]
    return np.asarray(m1_0, dtype=float) * (1.0 - integral / ctx.nu)


def beta_profile(ctx: BoundContext, i0: int) -> np.ndarray:
    tau = ctx.ric.t[i0:] - ctx.ric.t[i0]
    kd_int = ctx.ric.kd_cumint[i0:] - ctx.ric.kd_cumint[i0]
    return np.exp(-2.0 * ctx.p_bar * tau - kd_int / ctx.nu)


def beta_factor(ctx: BoundContext, t0: float, t: float) -> float:
    i0, i1 = _window(ctx, t0, t)
    return float(beta_profile(ctx, i0)[i1 - i0])


def bound_b_profile(
    ctx: BoundContext, c: float, sign: int, i0: int, with_beta: bool = True
) -> np.ndarray:
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if c < 0.0:
        raise ValueError("c must be nonnegative")
    tau = ctx.ric.t[i0:] - ctx.ric.t[i0]
    g = ctx.ric.kd[i0:] * np.exp(sign * c * tau)
    if with_beta:
        g = g * beta_profile(ctx, i0)
    return _cumtrapz0(g, ctx.ric.dt) / ctx.nu


def bound_B(
    ctx: BoundContext, c: float, sign: int, t0: float, t: float, with_beta: bool = True
) -> float:
    i0, i1 = _window(ctx, t0, t)
    return float(bound_b_profile(ctx, c, sign, i0, with_beta)[i1 - i0])


def envelope_profiles(
    ctx: BoundContext, sigma2_0: float, i0: int, law: str
) -> tuple[np.ndarray, np.ndarray]:
    """(lower, upper) variance envelopes on the grid from index i0 onward."""
    if law not in ENVELOPE_LAWS:
        raise ValueError(f"unknown envelope law {law!r}")
    tau = ctx.ric.t[i0:] - ctx.ric.t[i0]
    grow = np.exp(2.0 * ctx.kernel_a * tau)
    shrink = np.exp(-2.0 * ctx.kernel_b * tau)
    if law == CLOSED_LOOP_LAW:
        kd_int = ctx.ric.kd_cumint[i0:] - ctx.ric.kd_cumint[i0]
        c_factor = np.exp(-2.0 * kd_int / ctx.nu)
        return sigma2_0 * shrink * c_factor, sigma2_0 * grow * c_factor
    with_beta = law == OPEN_LOOP_LAW
    b_plus = bound_b_profile(ctx, ctx.kernel_b, +1, i0, with_beta)
    b_minus = bound_b_profile(ctx, ctx.kernel_a, -1, i0, with_beta)
    lower = sigma2_0 * shrink * np.maximum(0.0, 1.0 - b_plus) ** 2
    upper = sigma2_0 * grow * (1.0 + b_minus) ** 2
    return lower, upper


def variance_bounds_open_loop(sigma2_0, ctx, t0, t) -> tuple[float, float]:
    return _envelope_at(ctx, sigma2_0, t0, t, OPEN_LOOP_LAW)


def variance_bounds_inexact(sigma2_0, ctx, t0, t) -> tuple[float, float]:
    return _envelope_at(ctx, sigma2_0, t0, t, INEXACT_LAW)


def variance_bounds_closed_loop(sigma2_0, ctx, t0, t) -> tuple[float, float]:
    return _envelope_at(ctx, sigma2_0, t0, t, CLOSED_LOOP_LAW)


def delta_sigma_profile(
    ctx: BoundContext, sigma2_t0: float, i0: int, law: str
) -> np.ndarray:
    """Envelope gap (upper minus clamped lower) driving variance triggers."""
    if law not in (OPEN_LOOP_LAW, INEXACT_LAW):
        raise ValueError("delta_sigma applies to the open-loop and inexact laws")
    lower, upper = envelope_profiles(ctx, sigma2_t0, i0, law)
    return upper - lower


def delta_sigma(
    sigma2_t0: float, ctx: BoundContext, t0: float, t: float, law: str = OPEN_LOOP_LAW
) -> float:
    i0, i1 = _window(ctx, t0, t)
    return float(delta_sigma_profile(ctx, sigma2_t0, i0, law)[i1 - i0])


def delta_m_profile(ctx: BoundContext, i0: int) -> np.ndarray:
    integral = ctx.ric.kdko_cumint[i0:] - ctx.ric.kdko_cumint[i0]
    return np.abs(1.0 - integral / ctx.nu)


def delta_m(ctx: BoundContext, t0: float, t: float) -> float:
    """|1 - (1/nu) int (kd+ko)| over the window; equals 1 at zero width."""
    i0, i1 = _window(ctx, t0, t)
    return float(delta_m_profile(ctx, i0)[i1 - i0])


def _envelope_at(ctx, sigma2_0, t0, t, law) -> tuple[float, float]:
    i0, i1 = _window(ctx, t0, t)
    lower, upper = envelope_profiles(ctx, float(sigma2_0), i0, law)
    return float(lower[i1 - i0]), float(upper[i1 - i0])


def _window(ctx: BoundContext, t0: float, t: float) -> tuple[int, int]:
    i0 = ctx.ric.index_of(t0)
    i1 = ctx.ric.index_of(t)
    if i1 < i0:
        raise ValueError("window end precedes its start")
    return i0, i1


def _cumtrapz0(y: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum((y[1:] + y[:-1]) * (0.5 * dx), out=out[1:])
    return out
