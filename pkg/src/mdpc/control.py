"""Riccati feedback laws on particle ensembles and the discretized cost.

All three laws share one gain structure, u_i = -(kd z_i + ko * mean(z)) / nu,
and differ only in which state feeds the gains: the measured nonlinear state
(closed loop), the co-simulated linear companion (open loop), or the frozen
reference state (inexact open loop).  States are measured relative to the
consensus target before the gains apply.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mdpc.ensemble import Ensemble
from mdpc.riccati import RiccatiSolution

CLOSED_LOOP = "closed"
OPEN_LOOP = "open"
INEXACT_OPEN_LOOP = "inexact"

CONTROL_KINDS = (CLOSED_LOOP, OPEN_LOOP, INEXACT_OPEN_LOOP)


@dataclass(frozen=True)
class ControlMode:
    kind: str
    target: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise ValueError(f"unknown control kind {self.kind!r}")
        object.__setattr__(self, "target", np.atleast_1d(np.asarray(self.target, float)))


def feedback_source(mode: ControlMode, ens: Ensemble) -> np.ndarray:
    if mode.kind == CLOSED_LOOP:
        return ens.v
    if mode.kind == OPEN_LOOP:
        return ens.w
    return ens.v0


def evaluate_control(
    mode: ControlMode, ens: Ensemble, ric: RiccatiSolution, t_index: int
) -> np.ndarray:
    """Per-particle control u_i = -(kd(t) z_i + ko(t) mean(z)) / nu with z the
    mode's feedback state shifted by the target."""
    if not 0 <= t_index < len(ric.t):
        raise IndexError(f"t_index {t_index} outside the Riccati grid")
    z = feedback_source(mode, ens) - mode.target
    m1 = z.mean(axis=0)
    return -(ric.kd[t_index] * z + ric.ko[t_index] * m1) / ric.nu


def evaluate_control_microscopic(
    states, ric: RiccatiSolution, t_index: int, target=0.0
) -> np.ndarray:
    """Finite-population feedback -( (kd - ko/N) z_i + ko * mean(z) ) / nu,
    using a gain trajectory solved with matching n_agents."""
    if ric.n_agents is None:
        raise ValueError("microscopic control needs a finite-N gain solution")
    if not 0 <= t_index < len(ric.t):
        raise IndexError(f"t_index {t_index} outside the Riccati grid")
    z = np.asarray(states, dtype=float) - target
    kd = ric.kd[t_index]
    ko = ric.ko[t_index]
    return -((kd - ko / ric.n_agents) * z + ko * z.mean(axis=0)) / ric.nu


@dataclass
class CostAccumulator:
    """Running discretized cost (dt / n) * sum_n sum_j (|v_j - target|^2 + nu |u_j|^2)."""

    nu: float
    dt: float
    target: np.ndarray = field(default_factory=lambda: np.zeros(1))
    running_j: float = 0.0
    n_steps_applied: int = 0


def accumulate_cost(acc: CostAccumulator, states, controls) -> CostAccumulator:
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if states.shape != controls.shape:
        raise ValueError("states and controls must have matching shapes")
    dev = states - acc.target
    acc.running_j += acc.dt * float(
        np.mean(np.sum(dev * dev, axis=-1) + acc.nu * np.sum(controls * controls, axis=-1))
    )
    acc.n_steps_applied += 1
    return acc
