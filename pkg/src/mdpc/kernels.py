"""Pairwise interaction kernels for consensus-type agent dynamics.

All supported kernels are radial: the interaction weight depends on the pair
(v, w) only through the squared distance |w - v|^2, so the hot loops work on
squared distances and never take a square root.  Each kernel carries certified
range bounds [-lower_a, upper_b] valid on the stated domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BOUNDED_CONFIDENCE = "bounded_confidence"
CUCKER_SMALE = "cucker_smale"
ATTRACTION_REPULSION = "attraction_repulsion"

KERNEL_KINDS = (BOUNDED_CONFIDENCE, CUCKER_SMALE, ATTRACTION_REPULSION)


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description with certified range [-lower_a, upper_b].

    ``params`` is kind-specific:
      bounded_confidence:   strength, radius
      cucker_smale:         offset, scale, softening, exponent
      attraction_repulsion: attract_power, repel_power
    """

    kind: str
    params: dict
    lower_a: float
    upper_b: float


def bounded_confidence(strength: float, radius: float) -> KernelSpec:
    """Indicator kernel: ``strength`` when |w - v| < radius, else 0."""
    if strength < 0.0:
        raise ValueError("strength must be nonnegative")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    params = {"strength": float(strength), "radius": float(radius)}
    a, b = _bounds(BOUNDED_CONFIDENCE, params, math.inf)
    return KernelSpec(BOUNDED_CONFIDENCE, params, a, b)


def cucker_smale(
    offset: float,
    scale: float,
    softening: float,
    exponent: float,
    domain_radius: float = math.inf,
) -> KernelSpec:
    """Alignment kernel: offset + scale / (softening + |w - v|^2)^exponent."""
    if softening <= 0.0:
        raise ValueError("softening must be positive")
    if exponent < 0.0:
        raise ValueError("exponent must be nonnegative")
    if offset < 0.0:
        raise ValueError("offset must be nonnegative")
    params = {
        "offset": float(offset),
        "scale": float(scale),
        "softening": float(softening),
        "exponent": float(exponent),
    }
    a, b = _bounds(CUCKER_SMALE, params, domain_radius)
    return KernelSpec(CUCKER_SMALE, params, a, b)


def attraction_repulsion(
    attract_power: float, repel_power: float, domain_radius: float
) -> KernelSpec:
    """Power-law kernel |w - v|^(attract_power-2) - |w - v|^(repel_power-2).

    Unbounded at large distances, so a finite ``domain_radius`` is mandatory;
    range bounds are certified for pairs within that radius only.  At zero
    distance the convention 0**0 == 1 applies, so repel_power == 2 gives the
    constant repulsion term -1.
    """
    if not (attract_power > repel_power >= 2.0):
        raise ValueError("need attract_power > repel_power >= 2")
    if not (math.isfinite(domain_radius) and domain_radius > 0.0):
        raise ValueError("attraction_repulsion needs a finite positive domain_radius")
    params = {"attract_power": float(attract_power), "repel_power": float(repel_power)}
    a, b = _bounds(ATTRACTION_REPULSION, params, domain_radius)
    return KernelSpec(ATTRACTION_REPULSION, params, a, b)


def evaluate_sqdist(kernel: KernelSpec, r2):
    """Kernel value as a function of squared pair distance (vectorized)."""
    r2 = np.asarray(r2, dtype=float)
    p = kernel.params
    if kernel.kind == BOUNDED_CONFIDENCE:
        return np.where(r2 < p["radius"] ** 2, p["strength"], 0.0)
    if kernel.kind == CUCKER_SMALE:
        return p["offset"] + p["scale"] / (p["softening"] + r2) ** p["exponent"]
    if kernel.kind == ATTRACTION_REPULSION:
        # 0**0 == 1 under numpy's power convention, which is the one we want.
        ea = (p["attract_power"] - 2.0) / 2.0
        eb = (p["repel_power"] - 2.0) / 2.0
        return r2**ea - r2**eb
    raise ValueError(f"unknown kernel kind {kernel.kind!r}")


def evaluate(kernel: KernelSpec, v, w):
    """Evaluate P(v, w) for a single pair or a batch of pairs.

    The last axis is the state dimension; scalars are treated as 1-d states.
    Shapes of v and w must match exactly.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape:
        raise ValueError(f"state shapes differ: {v.shape} vs {w.shape}")
    if v.ndim == 0:
        v = v[None]
        w = w[None]
    r2 = np.sum((w - v) ** 2, axis=-1)
    out = evaluate_sqdist(kernel, r2)
    return float(out) if np.ndim(out) == 0 else out


def kernel_bounds(kernel: KernelSpec, domain_radius: float) -> tuple[float, float]:
    """Certified (a, b) with P in [-a, b] for pairs within ``domain_radius``."""
    if domain_radius <= 0.0:
        raise ValueError("domain_radius must be positive")
    return _bounds(kernel.kind, kernel.params, domain_radius)


def linearization_coefficient(kernel: KernelSpec, v_bar=None) -> float:
    """Kernel value at zero pair distance, P(v_bar, v_bar).

    Radial kernels make the linearization point itself irrelevant; it is
    accepted for interface symmetry only.
    """
    del v_bar
    return float(evaluate_sqdist(kernel, 0.0))


def _bounds(kind: str, params: dict, radius: float) -> tuple[float, float]:
    if kind == BOUNDED_CONFIDENCE:
        return 0.0, params["strength"]
    if kind == CUCKER_SMALE:
        # Monotone in distance, extremes at r = 0 and r = radius.
        p0 = params["offset"] + params["scale"] / params["softening"] ** params["exponent"]
        if math.isinf(radius) or params["exponent"] == 0.0:
            p_far = params["offset"] + (
                params["scale"] if params["exponent"] == 0.0 else 0.0
            )
        else:
            p_far = params["offset"] + params["scale"] / (
                params["softening"] + radius**2
            ) ** params["exponent"]
        lo, hi = min(p0, p_far), max(p0, p_far)
        return max(0.0, -lo), max(0.0, hi)
    if kind == ATTRACTION_REPULSION:
        if not math.isfinite(radius):
            raise ValueError("attraction_repulsion bounds require a finite radius")
        pa = params["attract_power"] - 2.0
        pb = params["repel_power"] - 2.0
        candidates = [0.0, radius**2]
        if pa > pb > 0.0:
            r_crit = (pb / pa) ** (1.0 / (pa - pb))
            if 0.0 < r_crit < radius:
                candidates.append(r_crit**2)
        spec = KernelSpec(ATTRACTION_REPULSION, params, 0.0, 0.0)
        values = [float(evaluate_sqdist(spec, r2)) for r2 in candidates]
        return max(0.0, -min(values)), max(0.0, max(values))
    raise ValueError(f"unknown kernel kind {kind!r}")
