"""Position-dependent background metrics on the torus.

Supports the perturbed-background convergence path: a Laplace-Beltrami
operator in divergence form, a C1 distance to a constant metric, and the
perturbed elliptic-inequality checks.  Curvature of the variable metric
is never computed; everything goes through first-order comparison with
the flat limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .conformal import ConformalMetric
from .estimates import (
    CheckReport,
    HypothesisBudget,
    _scale,
    _tolerance,
    make_check,
)
from .grid import (
    FlatMetric,
    GridSpec,
    ScalarField,
    _diff_axis,
    gradient_norm_sq,
    integrate,
    laplacian,
    partial_derivatives,
)

__all__ = ["MetricField", "laplace_beltrami", "c1_distance", "check_perturbed_pde"]


@dataclass(frozen=True, eq=False)
class MetricField:
    """Symmetric positive-definite matrix at every grid point."""

    spec: GridSpec
    entries: NDArray[np.float64]  # shape spec.shape + (n, n)

    def __post_init__(self) -> None:
        n = self.spec.dim
        arr = np.asarray(self.entries, dtype=np.float64)
        if arr.shape != self.spec.shape + (n, n):
            raise ValueError(
                f"metric-field shape {arr.shape} does not match grid {self.spec.shape}+({n},{n})"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("metric-field entries must be finite")
        if not np.allclose(arr, np.swapaxes(arr, -1, -2), rtol=1e-12, atol=1e-12):
            raise ValueError("metric field must be symmetric at every point")
        arr = 0.5 * (arr + np.swapaxes(arr, -1, -2))
        eigs = np.linalg.eigvalsh(arr.reshape(-1, n, n))
        if eigs[:, 0].min() <= 0.0:
            raise ValueError("metric field must be positive definite at every point")
        arr.flags.writeable = False
        object.__setattr__(self, "entries", arr)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @classmethod
    def constant(cls, spec: GridSpec, metric: FlatMetric) -> "MetricField":
        arr = np.broadcast_to(metric.entries, spec.shape + (metric.dim, metric.dim)).copy()
        return cls(spec, arr)

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "MetricField":
        """Sample a matrix-valued ``fn(*meshes) -> (..., n, n)`` on the grid."""
        return cls(spec, np.asarray(fn(*spec.meshes()), dtype=float))

    @property
    def is_constant(self) -> bool:
        flat = self.entries.reshape(-1, self.dim, self.dim)
        return bool(np.all(flat == flat[0]))

    def as_flat_metric(self) -> FlatMetric:
        if not self.is_constant:
            raise ValueError("metric field is not constant")
        return FlatMetric(self.entries.reshape(-1, self.dim, self.dim)[0])

    def sqrt_det_field(self) -> NDArray[np.float64]:
        det = np.linalg.det(self.entries.reshape(-1, self.dim, self.dim))
        return np.sqrt(det).reshape(self.spec.shape)


def laplace_beltrami(g: MetricField, u: ScalarField, accuracy=4) -> ScalarField:
    """Divergence-form Laplacian (1/sqrt det g) d_l (sqrt det g g^{lm} d_m u).

    Constant metric fields are delegated to the flat trace Laplacian so
    the two operators agree to machine precision in that regime; the
    genuinely variable case discretises the divergence form with the
    shared difference stencils.
    """
    if g.spec != u.spec:
        raise ValueError("metric field and scalar field live on different grids")
    if g.is_constant:
        return laplacian(u, g.as_flat_metric(), accuracy=accuracy)

    n = g.dim
    spec = g.spec
    inv = np.linalg.inv(g.entries.reshape(-1, n, n)).reshape(spec.shape + (n, n))
    sd = g.sqrt_det_field()
    parts = partial_derivatives(u, accuracy)
    div = np.zeros(spec.shape)
    for l in range(n):
        flux = np.zeros(spec.shape)
        for m in range(n):
            flux += inv[..., l, m] * parts[m]
        flux *= sd
        div += _diff_axis(flux, l, 1, accuracy, spec.spacings[l])
    return ScalarField(spec, (div / sd).ravel())


def c1_distance(g: MetricField, g0: FlatMetric, accuracy=4) -> float:
    """Sup-norm C1 distance between a metric field and a constant metric.

    Combines the value sup ``max |g_lm - g0_lm|`` and the derivative sup
    ``max |d_k g_lm|`` by maximum (the constant metric contributes no
    derivative part).
    """
    if g.dim != g0.dim:
        raise ValueError("dimension mismatch")
    n = g.dim
    value_sup = float(np.abs(g.entries - g0.entries).max())
    deriv_sup = 0.0
    for l in range(n):
        for m in range(l, n):
            comp = g.entries[..., l, m]
            for k in range(n):
                dk = _diff_axis(comp, k, 1, accuracy, g.spec.spacings[k])
                deriv_sup = max(deriv_sup, float(np.abs(dk).max()))
    return max(value_sup, deriv_sup)


def _first_order_coefficient(g: MetricField, accuracy=4) -> NDArray[np.float64]:
    """Pointwise g0-free drift size |B|, B^m = (1/sqrt det) d_l (sqrt det g^{lm}).

    Returned as the coefficient field |B|_{g0} with g0 the identity
    pairing of coordinate components; callers contract it against the
    reference metric themselves when needed.
    """
    n = g.dim
    spec = g.spec
    inv = np.linalg.inv(g.entries.reshape(-1, n, n)).reshape(spec.shape + (n, n))
    sd = g.sqrt_det_field()
    comps = []
    for m in range(n):
        acc = np.zeros(spec.shape)
        for l in range(n):
            acc += _diff_axis(sd * inv[..., l, m], l, 1, accuracy, spec.spacings[l])
        comps.append(acc / sd)
    return np.stack(comps, axis=-1)


def check_perturbed_pde(
    g: MetricField,
    g0: FlatMetric,
    m: ConformalMetric,
    budget: HypothesisBudget,
) -> list[CheckReport]:
    """Elliptic-inequality checks with a C1-perturbed background.

    Prerequisite: ``c1_distance(g, g0) <= C/j`` for the budget's C
    (measured from the field itself when the budget leaves it unset).

    Pointwise check (unfavourable sign branch, taken per point so a pass
    covers every admissible sign assignment; a sharper signed analysis
    would track the realised branch):

        -(n-1)(1 +- C/j) Lap e^{-2f}
          + ((n-1)(n+2)(1 +- C/j) - C1/j) |grad e^{-f}|^2  <=  (1 + C1)/j

    Integrated check:

        int |grad e^{-f}|^2 dV0  <=  (1+C1) Vol0 / (j D),
        D = (n-1)(n+2)(1 - C/j) - C1/j   (reported as prerequisite-failed
        when D is not positive, i.e. j is too small for the expansion).

    All operators are taken with respect to the flat limit g0; the
    variable metric enters only through C and C1.
    """
    if not (g.dim == g0.dim == m.dim):
        raise ValueError("dimension mismatch")
    if g.spec != m.spec:
        raise ValueError("background field and conformal exponent live on different grids")
    n = m.dim
    j = budget.j

    c1_meas = c1_distance(g, g0)
    c_budget = budget.Cc1 if budget.Cc1 is not None else c1_meas * j
    prereq_ok = c1_meas <= c_budget / j + 1e-12 * max(1.0, c_budget / j)

    neg2 = ScalarField(m.spec, np.exp(-2.0 * m.f.values))
    neg1 = np.exp(-m.f.values)

    if budget.C1 is not None:
        c1_coeff = float(budget.C1)
    else:
        drift = _first_order_coefficient(g)
        drift_norm = np.sqrt(
            np.einsum("...l,lm,...m->...", drift, g0.entries, drift)
        )
        c1_coeff = float(j * (neg1 * drift_norm).max())

    eps = c_budget / j

    def lhs_field(acc):
        lap = laplacian(neg2, g0, accuracy=acc).values
        grad_neg1 = gradient_norm_sq(ScalarField(m.spec, neg1), g0, accuracy=acc).values
        term_lap = -(n - 1) * lap + (n - 1) * eps * np.abs(lap)
        coeff = (n - 1) * (n + 2) * (1.0 + eps) - c1_coeff / j
        return term_lap + coeff * grad_neg1, grad_neg1

    field_fd, grad_fd = lhs_field(4)
    field_sp, grad_sp = lhs_field("spectral")
    rhs_point = (1.0 + c1_coeff) / j
    lhs_point = float(field_fd.max())
    disc_point = float(np.abs(field_fd - field_sp).max())

    details = {
        "j": j,
        "c1_distance": c1_meas,
        "closeness_constant": c_budget,
        "expansion_coefficient": c1_coeff,
        "disc_allowance": disc_point,
    }
    pointwise = make_check(
        "perturbed_pde_pointwise",
        lhs_point,
        rhs_point,
        "perturbed-elliptic-inequality",
        _tolerance(_scale(lhs_point, rhs_point), disc_point),
        prereq_failed=not prereq_ok,
        details=details,
    )

    denom = (n - 1) * (n + 2) * (1.0 - eps) - c1_coeff / j
    vol0 = g0.torus_volume
    lhs_int = integrate(
        gradient_norm_sq(ScalarField(m.spec, neg1), g0, accuracy=4), g0
    )
    disc_int = abs(
        lhs_int
        - integrate(
            gradient_norm_sq(ScalarField(m.spec, neg1), g0, accuracy="spectral"), g0
        )
    )
    if denom <= 0.0:
        integrated = make_check(
            "perturbed_sobolev_bound",
            lhs_int,
            math.inf if denom == 0 else -1.0,
            "perturbed-sobolev-bound",
            0.0,
            prereq_failed=True,
            details=dict(details, denominator=denom, note="j too small for the expansion"),
        )
    else:
        rhs_int = (1.0 + c1_coeff) * vol0 / (j * denom)
        integrated = make_check(
            "perturbed_sobolev_bound",
            lhs_int,
            rhs_int,
            "perturbed-sobolev-bound",
            _tolerance(_scale(lhs_int, rhs_int), disc_int),
            prereq_failed=not prereq_ok,
            details=dict(details, denominator=denom, disc_allowance_int=disc_int),
        )
    return [pointwise, integrated]
