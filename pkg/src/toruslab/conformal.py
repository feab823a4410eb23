"""Conformal metrics ``g = e^{2f} g0`` over a constant background.

The exponent field f fully determines the geometry relative to the flat
background: scalar curvature, volumes, weighted averages, and pointwise
comparison constants against other flat metrics.

Scalar curvature is only provided over constant-coefficient backgrounds,
whose own curvature vanishes identically; position-dependent backgrounds
are handled through the operators in :mod:`toruslab.background`, never
through a full curvature tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import (
    FlatMetric,
    RegionMask,
    ScalarField,
    gradient_norm_sq,
    integrate,
    laplacian,
)

#: largest |exponent * f| allowed before exponentiation (double-precision margin)
EXP_GUARD = 600.0

__all__ = ["EXP_GUARD", "ConformalMetric", "scalar_curvature", "volume",
           "volume_of_region", "weighted_average", "metric_lower_bound_constant"]


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    """Immutable pair of a flat background and a conformal exponent."""

    background: FlatMetric
    f: ScalarField

    def __post_init__(self) -> None:
        if self.background.dim != self.f.spec.dim:
            raise ValueError("background metric and exponent field dimensions differ")
        if float(np.abs(self.f.values).max(initial=0.0)) > EXP_GUARD:
            raise ValueError("conformal exponent too large for finite e^{f}")

    @property
    def spec(self):
        return self.f.spec

    @property
    def dim(self) -> int:
        return self.background.dim

    @classmethod
    def flat(cls, background: FlatMetric, spec) -> "ConformalMetric":
        return cls(background, ScalarField.constant(spec, 0.0))


def _guarded_exp(values: np.ndarray, factor: float) -> np.ndarray:
    scaled = factor * values
    peak = float(np.abs(scaled).max(initial=0.0))
    if peak > EXP_GUARD:
        raise ValueError(
            f"exponent {peak:.3g} exceeds the overflow guard ({EXP_GUARD:g})"
        )
    return np.exp(scaled)


def scalar_curvature(m: ConformalMetric, accuracy=4) -> ScalarField:
    """Scalar curvature of ``e^{2f} g0`` over the flat background.

    R = e^{-2f} ( -2(n-1) Lap f - (n-2)(n-1) |grad f|^2 ), the background
    term being zero for constant coefficients.
    """
    n = m.dim
    lap = laplacian(m.f, m.background, accuracy=accuracy).values
    grad2 = gradient_norm_sq(m.f, m.background, accuracy=accuracy).values
    pref = _guarded_exp(m.f.values, -2.0)
    vals = pref * (-2.0 * (n - 1) * lap - (n - 2) * (n - 1) * grad2)
    return ScalarField(m.spec, vals)


def volume(m: ConformalMetric) -> float:
    """Total volume ``integral of e^{n f} dV_{g0}``."""
    ef = _guarded_exp(m.f.values, float(m.dim))
    return integrate(ScalarField(m.spec, ef), m.background)


def volume_of_region(m: ConformalMetric, mask: RegionMask) -> float:
    """Volume of a measurable region: masked quadrature of ``e^{n f}``."""
    if mask.spec != m.spec:
        raise ValueError("mask lives on a different grid")
    if mask.is_empty:
        return 0.0
    ef = _guarded_exp(m.f.values[mask.membership], float(m.dim))
    return float(ef.sum() * m.spec.cell_volume * m.background.sqrt_det)


def weighted_average(m: ConformalMetric, exponent: float) -> float:
    """Background-volume average of ``e^{exponent * f}``."""
    if not np.isfinite(exponent):
        raise ValueError("exponent must be finite")
    ef = _guarded_exp(m.f.values, float(exponent))
    return integrate(ScalarField(m.spec, ef), m.background) / m.background.torus_volume


def metric_lower_bound_constant(m: ConformalMetric, reference: FlatMetric) -> float:
    """Largest lam >= 0 with ``g(v,v) >= lam * reference(v,v)`` everywhere.

    For a conformal metric this factorises into the worst conformal
    factor times the smallest generalised eigenvalue of the pencil
    (background, reference); the pencil is solved exactly (n <= 4).
    """
    if reference.dim != m.dim:
        raise ValueError("reference metric has the wrong dimension")
    pencil_min = float(
        scipy.linalg.eigh(
            m.background.entries, reference.entries, eigvals_only=True
        )[0]
    )
    min_factor = float(np.exp(2.0 * m.f.values.min()))
    return min_factor * pencil_min
