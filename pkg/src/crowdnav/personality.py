"""Personality traits from RVO motion parameters, and the trait-derived
parameter bounds used to clamp predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rvo import MotionModel

TRAIT_NAMES = ("aggressive", "assertive", "shy", "active", "tense", "impulsive")

# rows: traits in TRAIT_NAMES order; columns: normalized motion parameters
RVO_MAT = np.array(
    [
        [-0.02, 0.32, 0.13, -0.41, 1.02],
        [0.03, 0.22, 0.11, -0.28, 1.05],
        [-0.04, -0.08, 0.02, 0.58, -0.88],
        [-0.06, 0.04, 0.04, -0.16, 1.07],
        [0.10, 0.07, -0.08, 0.19, 0.15],
        [0.03, -0.15, 0.03, -0.23, 0.23],
    ]
)
RVO_MAT_PINV = np.linalg.pinv(RVO_MAT)

PARAM_CENTERS = np.array([15.0, 10.0, 30.0, 0.8, 1.4])
PARAM_SCALES = np.array([13.5, 49.5, 14.5, 0.85, 0.5])

DEFAULT_Y = 5.0
_PARAM_FLOOR = 1e-3


def normalize(m: MotionModel | np.ndarray) -> np.ndarray:
    values = m.as_array() if isinstance(m, MotionModel) else np.asarray(m, dtype=float)
    return (values - PARAM_CENTERS) / PARAM_SCALES


def denormalize(u) -> np.ndarray:
    return np.asarray(u, dtype=float) * PARAM_SCALES + PARAM_CENTERS


@dataclass(frozen=True)
class TraitVector:
    b: np.ndarray
    w: np.ndarray = field(default_factory=lambda: np.ones(6))

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).reshape(6)
        w = np.asarray(self.w, dtype=float).reshape(6)
        if not (np.isfinite(b).all() and np.isfinite(w).all()):
            raise ValueError("trait vector must be finite")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w", w)

    def as_dict(self) -> dict[str, float]:
        return {name: float(x) for name, x in zip(TRAIT_NAMES, self.b)}


@dataclass(frozen=True)
class ParamBounds:
    m_lb: np.ndarray
    m_ub: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.m_lb, dtype=float).reshape(5)
        ub = np.asarray(self.m_ub, dtype=float).reshape(5)
        if (lb > ub).any():
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "m_lb", lb)
        object.__setattr__(self, "m_ub", ub)

    @classmethod
    def unbounded(cls) -> "ParamBounds":
        return cls(np.full(5, -np.inf), np.full(5, np.inf))


def traits_from_params(m: MotionModel | np.ndarray) -> TraitVector:
    return TraitVector(RVO_MAT @ normalize(m))


def params_from_traits(b) -> np.ndarray:
    """Least-squares parameter vector for a trait vector (pseudo-inverse)."""
    b = b.b if isinstance(b, TraitVector) else np.asarray(b, dtype=float)
    return denormalize(RVO_MAT_PINV @ b)


def dominant_trait(b: TraitVector | np.ndarray) -> int:
    values = b.b if isinstance(b, TraitVector) else np.asarray(b, dtype=float)
    # np.argmax returns the first maximum, which is the documented tie rule
    return int(np.argmax(values))


def compute_bounds(b: TraitVector | np.ndarray, y: float = DEFAULT_Y) -> ParamBounds:
    """Perturb the dominant trait by y% and the rest by y/3%, map back.

    The perturbation is multiplicative on the signed trait value, and the
    bounds are the componentwise min/max of the two mapped vectors.
    """
    if y < 0:
        raise ValueError(f"y must be non-negative, got {y}")
    values = b.b if isinstance(b, TraitVector) else np.asarray(b, dtype=float)
    if np.isinf(y):
        return ParamBounds.unbounded()
    frac = np.full(6, y / 300.0)
    frac[dominant_trait(values)] = y / 100.0
    up = params_from_traits(values * (1.0 + frac))
    down = params_from_traits(values * (1.0 - frac))
    return ParamBounds(np.minimum(up, down), np.maximum(up, down))


def clamp_params(m: MotionModel | np.ndarray, bounds: ParamBounds) -> MotionModel | np.ndarray:
    """Componentwise clamp into [m_lb, m_ub].

    Returns the same kind it was given.  When a bound is non-positive the
    result of clamping a MotionModel is kept strictly positive.
    """
    if isinstance(m, MotionModel):
        clamped = np.clip(m.as_array(), bounds.m_lb, bounds.m_ub)
        return MotionModel.from_array(np.maximum(clamped, _PARAM_FLOOR))
    return np.clip(np.asarray(m, dtype=float), bounds.m_lb, bounds.m_ub)


def recompute_weights(b_clamped: TraitVector | np.ndarray, m_clamped: MotionModel | np.ndarray) -> TraitVector:
    """Weights that rescale the unit-weight traits of ``m_clamped`` onto
    ``b_clamped``.

    Components where the unit-weight trait vanishes keep weight 1.
    """
    target = b_clamped.b if isinstance(b_clamped, TraitVector) else np.asarray(b_clamped, dtype=float)
    unit = traits_from_params(m_clamped).b
    safe = np.abs(unit) >= 1e-9
    w = np.ones(6)
    w[safe] = target[safe] / unit[safe]
    return TraitVector(target, w)
