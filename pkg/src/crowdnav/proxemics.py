"""PEN personality factors and per-pedestrian proxemic distances (cm)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .personality import TraitVector

# rows: psychoticism, extraversion, neuroticism; columns: the six traits
PEN_MAT = np.array(
    [
        [0.22, 0.28, -0.09, -0.01, -0.17, 0.31],
        [0.16, 0.33, 0.07, 0.53, 0.05, 0.10],
        [-0.15, 0.16, 0.47, -0.01, 0.42, -0.08],
    ]
)

EXTROVERT_PERSONAL_CM = 179.58
INTROVERT_PERSONAL_CM = 88.9
EXTROVERT_SOCIAL_CM = 267.97
INTROVERT_SOCIAL_CM = 233.17


@dataclass(frozen=True)
class PenVector:
    psychoticism: float
    extraversion: float
    neuroticism: float

    def as_array(self) -> np.ndarray:
        return np.array([self.psychoticism, self.extraversion, self.neuroticism])


@dataclass(frozen=True)
class ProxemicProfile:
    d_p: float
    d_s: float

    @property
    def personal_m(self) -> float:
        return self.d_p / 100.0

    @property
    def social_m(self) -> float:
        return self.d_s / 100.0


def pen_from_traits(b: TraitVector | np.ndarray) -> PenVector:
    values = b.b if isinstance(b, TraitVector) else np.asarray(b, dtype=float)
    p, e, n = PEN_MAT @ values
    return PenVector(float(p), float(e), float(n))


def normalized_extraversion(pen: PenVector) -> float:
    """Extraversion over the PEN magnitude, clamped to [0, 1].

    A vanishing PEN vector carries no information and maps to 0.5.
    """
    norm = math.sqrt(pen.psychoticism**2 + pen.extraversion**2 + pen.neuroticism**2)
    if norm < 1e-9:
        return 0.5
    return min(1.0, max(0.0, pen.extraversion / norm))


def personal_distance(pen_e_norm: float) -> float:
    return EXTROVERT_PERSONAL_CM * pen_e_norm + INTROVERT_PERSONAL_CM * (1.0 - pen_e_norm)


def social_distance(pen_e_norm: float) -> float:
    return INTROVERT_SOCIAL_CM if pen_e_norm < 0.5 else EXTROVERT_SOCIAL_CM


def profile_from_traits(b: TraitVector | np.ndarray) -> tuple[PenVector, ProxemicProfile]:
    pen = pen_from_traits(b)
    e = normalized_extraversion(pen)
    return pen, ProxemicProfile(personal_distance(e), social_distance(e))
