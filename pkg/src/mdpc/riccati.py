"""Backward differential Riccati systems for all-to-all consensus coupling.

Three solvers share one fixed-step RK4 integrator run in reversed time
(tau = T - t), so every trajectory starts from the zero terminal condition
and is stored back on the forward grid:

* ``solve_scaled_finite_n`` -- the reduced two-gain system for N agents after
  the gains are rescaled by N and N**2,
* ``solve_limit``           -- its large-population limit,
* ``solve_full_matrix_oracle`` -- the unreduced dense matrix equation, kept as
  a validation oracle for small N.

The combined gain s = kd + alpha * ko obeys -s' = 1 - s**2 / nu regardless of
N, with the closed form ``s_closed_form``; solver output is checked against it
in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mdpc.errors import DivergenceError


@dataclass(frozen=True)
class RiccatiConfig:
    """Backward-solve parameters.

    ``dt`` is the storage grid step (aligned with the simulation step); each
    grid interval is integrated with ``substeps`` RK4 stages so the ODE error
    stays far below Monte Carlo noise.  ``n_agents`` absent means the
    large-population limit system.
    """

    p_bar: float
    nu: float
    horizon: float
    dt: float
    n_agents: int | None = None
    substeps: int = 8

    def __post_init__(self):
        if self.nu <= 0.0:
            raise ValueError("nu must be positive")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        steps = round(self.horizon / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("dt must divide horizon to one part in 1e9")
        if self.n_agents is not None and self.n_agents < 2:
            raise ValueError("n_agents must be at least 2")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


@dataclass(frozen=True)
class RiccatiSolution:
    """Gain trajectories on the uniform forward grid t[0]=0 .. t[-1]=T.

    ``kd_cumint`` and ``kdko_cumint`` are running trapezoid integrals of kd
    and kd + ko from t=0; the moment-bound machinery differences them to get
    window integrals without re-quadrature.
    """

    t: np.ndarray
    kd: np.ndarray
    ko: np.ndarray
    s: np.ndarray
    kd_cumint: np.ndarray
    kdko_cumint: np.ndarray
    nu: float
    p_bar: float
    n_agents: int | None

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def index_of(self, time: float) -> int:
        """Grid index of an on-grid time; off-grid times are rejected."""
        j = round(time / self.dt)
        if j < 0 or j >= len(self.t) or abs(self.t[j] - time) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {time!r} is not on the solution grid")
        return j


def s_closed_form(t, nu: float, horizon: float):
    """Combined gain sqrt(nu) * tanh((T - t) / sqrt(nu))."""
    root = np.sqrt(nu)
    return root * np.tanh((horizon - np.asarray(t, dtype=float)) / root)


def solve_limit(cfg: RiccatiConfig) -> RiccatiSolution:
    """Integrate the limit gain system backward from zero terminal data.

    In reversed time: kd' = -2*p*kd - kd^2/nu + 1 and
    ko' = 2*p*kd - ko*(2*kd + ko)/nu; the combined gain is s = kd + ko.
    """
    if cfg.n_agents is not None:
        raise ValueError("limit solver takes a config without n_agents")
    p, nu = cfg.p_bar, cfg.nu

    def rhs(y):
        kd, ko = y
        return np.array(
            [
                -2.0 * p * kd - kd * kd / nu + 1.0,
                2.0 * p * kd - ko * (2.0 * kd + ko) / nu,
            ]
        )

    ys = _integrate_backward(rhs, np.zeros(2), cfg)
    kd, ko = ys[:, 0], ys[:, 1]
    return _assemble(cfg, kd, ko, kd + ko)


def solve_scaled_finite_n(cfg: RiccatiConfig) -> RiccatiSolution:
    """Integrate the rescaled finite-N gain system backward.

    With alpha = (N-1)/N, in reversed time:
      kd' = -2*p*alpha*(kd - ko/N) - (kd^2 + (alpha/N)*ko^2)/nu + 1
      ko' =  2*p*(kd - ko/N) - (2*kd*ko + alpha*ko^2 - ko^2/N)/nu
    and the combined gain is s = kd + alpha*ko.
    """
    if cfg.n_agents is None:
        raise ValueError("finite-N solver needs n_agents")
    p, nu, n = cfg.p_bar, cfg.nu, cfg.n_agents
    alpha = (n - 1) / n

    def rhs(y):
        kd, ko = y
        return np.array(
            [
                -2.0 * p * alpha * (kd - ko / n)
                - (kd * kd + (alpha / n) * ko * ko) / nu
                + 1.0,
                2.0 * p * (kd - ko / n)
                - (2.0 * kd * ko + alpha * ko * ko - ko * ko / n) / nu,
            ]
        )

    ys = _integrate_backward(rhs, np.zeros(2), cfg)
    kd, ko = ys[:, 0], ys[:, 1]
    return _assemble(cfg, kd, ko, kd + alpha * ko)


def solve_full_matrix_oracle(cfg: RiccatiConfig) -> np.ndarray:
    """Dense matrix Riccati solve, -K' = K A + A^T K - (N/nu) K K + Q, K(T)=0.

    A is the all-to-all consensus coupling matrix (p/N off-diagonal,
    p(1-N)/N diagonal) and Q = I/N.  Returns K on the forward grid with shape
    (len(grid), N, N).  Restricted to small N; this is a validation oracle
    for the reduced solver, not a production path.
    """
    if cfg.n_agents is None:
        raise ValueError("full-matrix oracle needs n_agents")
    n = cfg.n_agents
    if n > 20:
        raise ValueError("full-matrix oracle is limited to n_agents <= 20")
    p, nu = cfg.p_bar, cfg.nu
    coupling = (p / n) * np.ones((n, n)) - p * np.eye(n)
    weight = np.eye(n) / n

    def rhs(k):
        return k @ coupling + coupling.T @ k - (n / nu) * (k @ k) + weight

    return _integrate_backward(rhs, np.zeros((n, n)), cfg)


def _integrate_backward(rhs, terminal, cfg: RiccatiConfig) -> np.ndarray:
    """Fixed-step RK4 in reversed time; returns states on the forward grid."""
    h = cfg.dt / cfg.substeps
    y = np.array(terminal, dtype=float)
    out = np.empty((cfg.n_steps + 1,) + y.shape)
    out[0] = y
    for j in range(cfg.n_steps):
        for _ in range(cfg.substeps):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            t_fail = cfg.horizon - (j + 1) * cfg.dt
            raise DivergenceError(f"Riccati integration diverged at t = {t_fail:.6g}")
        out[j + 1] = y
    return out[::-1]


def _assemble(cfg: RiccatiConfig, kd, ko, s) -> RiccatiSolution:
    t = np.linspace(0.0, cfg.horizon, cfg.n_steps + 1)
    return RiccatiSolution(
        t=t,
        kd=kd,
        ko=ko,
        s=s,
        kd_cumint=_cumtrapz0(kd, cfg.dt),
        kdko_cumint=_cumtrapz0(kd + ko, cfg.dt),
        nu=cfg.nu,
        p_bar=cfg.p_bar,
        n_agents=cfg.n_agents,
    )


def _cumtrapz0(y: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum((y[1:] + y[:-1]) * (0.5 * dx), out=out[1:])
    return out
