"""Inequality checkers for conformal metrics on flat tori.

Every checker returns one or more :class:`CheckReport` values carrying
both sides of the inequality, the slack, the tolerance used, and a
pass/fail/prerequisite status.  The checkers never assert; deciding what
a failure means is left to callers (pipelines, tests, the CLI).

Tolerances combine a relative part (1e-8 of the compared magnitudes)
with a measured discretization allowance: every difference-operator
expression is evaluated a second time with spectral accuracy and the
sup difference between the two routes is added, scaled by a safety
factor.  Both parts are recorded on the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats.qmc

from .conformal import (
    ConformalMetric,
    metric_lower_bound_constant,
    volume,
    volume_of_region,
    weighted_average,
)
from .grid import (
    TWO_PI,
    FlatMetric,
    GridSpec,
    RegionMask,
    ScalarField,
    ball_average_max,
    ball_mask,
    gradient_norm_sq,
    integrate,
    laplacian,
)

REL_TOL = 1e-8
SHADOW_SAFETY = 2.0

__all__ = [
    "REL_TOL",
    "SHADOW_SAFETY",
    "HypothesisBudget",
    "CheckReport",
    "RegionMask",
    "make_check",
    "check_scalar_lower_bound",
    "check_conformal_pde",
    "check_sobolev_triple",
    "jensen_sandwich",
    "c0_lower_bound",
    "ui_from_lp",
    "ui_fit",
    "negative_scalar_obstruction",
    "default_mask_family",
    "first_nonzero_eigenvalue",
    "reports_to_json",
    "reports_to_csv",
    "CSV_COLUMNS",
]


@dataclass(frozen=True)
class HypothesisBudget:
    """Constants of the hypotheses under test.

    j       sequence index (the curvature floor is -1/j)
    V0      cap on the conformal volume
    D0      cap on the diameter
    Cneg    cap on the integral of e^{-2f} against the background volume
    Cui, q  uniform-integrability pair: Vol_g(E) <= Cui * Vol_{g0}(E)^q
    p, Cp   optional L^p certificate input/cap (p must exceed n at use)
    alpha   exponent for the alpha-family (defaults to (n-2)/4 at use)
    Cc1     optional C^1-closeness constant for perturbed backgrounds
    C1      optional first-order expansion coefficient (measured if None)
    """

    j: int
    V0: float
    D0: float
    Cneg: float
    Cui: float
    q: float = 1.0
    p: float | None = None
    Cp: float | None = None
    alpha: float | None = None
    Cc1: float | None = None
    C1: float | None = None

    def __post_init__(self) -> None:
        if self.j < 1:
            raise ValueError("sequence index j must be at least 1")
        for name in ("V0", "D0", "Cneg", "Cui"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.q <= 1.0:
            raise ValueError("uniform-integrability exponent q must be in (0, 1]")
        if self.p is not None and self.p <= 0:
            raise ValueError("p must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def with_j(self, j: int) -> "HypothesisBudget":
        return replace(self, j=int(j))

    def resolved_alpha(self, n: int) -> float:
        """The alpha-family exponent, validated against the dimension."""
        top = 0.5 * (n - 2)
        alpha = self.alpha if self.alpha is not None else 0.5 * top
        if not 0.0 < alpha < top:
            raise ValueError(f"alpha must lie in (0, {top:g}) for n={n}, got {alpha:g}")
        return float(alpha)


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one inequality check: lhs <= rhs within tolerance."""

    name: str
    lhs: float
    rhs: float
    slack: float
    passed: bool | None
    equation_tag: str
    tolerance: float
    status: str  # "pass" | "fail" | "prereq"
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": _json_num(self.lhs),
            "rhs": _json_num(self.rhs),
            "slack": _json_num(self.slack),
            "pass": self.passed,
            "equation_tag": self.equation_tag,
            "tolerance": _json_num(self.tolerance),
            "status": self.status,
            "details": _json_clean(self.details),
        }


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_json_clean(v) for v in np.asarray(obj).tolist()] if isinstance(obj, np.ndarray) else [
            _json_clean(v) for v in obj
        ]
    if isinstance(obj, (np.floating, float)):
        return _json_num(float(obj))
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def make_check(
    name: str,
    lhs: float,
    rhs: float,
    tag: str,
    tolerance: float,
    prereq_failed: bool = False,
    details: dict | None = None,
) -> CheckReport:
    lhs = float(lhs)
    rhs = float(rhs)
    tolerance = float(tolerance)
    details = dict(details or {})
    if prereq_failed:
        return CheckReport(name, lhs, rhs, rhs - lhs, None, tag, tolerance, "prereq", details)
    ok = lhs <= rhs + tolerance
    return CheckReport(
        name, lhs, rhs, rhs - lhs, bool(ok), tag, tolerance, "pass" if ok else "fail", details
    )


def _tolerance(scale: float, disc: float = 0.0) -> float:
    return REL_TOL * abs(scale) + SHADOW_SAFETY * disc


def _scale(lhs: float, rhs: float) -> float:
    return max(abs(lhs), abs(rhs), 1e-30)


# ---------------------------------------------------------------------------
# curvature floor and the elliptic-inequality family
# ---------------------------------------------------------------------------


def _curvature_pair(m: ConformalMetric):
    """Scalar curvature with the stencil route and its spectral shadow."""
    from .conformal import scalar_curvature  # local import keeps module load light

    r_fd = scalar_curvature(m, accuracy=4)
    r_sp = scalar_curvature(m, accuracy="spectral")
    disc = float(np.abs(r_fd.values - r_sp.values).max())
    return r_fd, disc


def check_scalar_lower_bound(m: ConformalMetric, eps: float) -> CheckReport:
    """Verify ``min R >= -eps``; reported as ``-min R <= eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    r_fd, disc = _curvature_pair(m)
    lhs = -float(r_fd.values.min())
    rhs = float(eps)
    tol = _tolerance(_scale(lhs, rhs), disc)
    return make_check(
        "scalar_lower_bound",
        lhs,
        rhs,
        "curvature-floor",
        tol,
        details={"min_curvature": float(r_fd.values.min()), "disc_allowance": disc},
    )


def _pde_fields(m: ConformalMetric, alpha: float, accuracy):
    """Sup residuals of the base and alpha-family elliptic inequalities."""
    n = m.dim
    j_free_base = (
        2.0 * laplacian(m.f, m.background, accuracy=accuracy).values
        + (n - 2) * gradient_norm_sq(m.f, m.background, accuracy=accuracy).values
    )
    e_alpha = ScalarField(m.spec, np.exp(alpha * m.f.values))
    lap_alpha = laplacian(e_alpha, m.background, accuracy=accuracy).values
    grad2_f = gradient_norm_sq(m.f, m.background, accuracy=accuracy).values
    j_free_alpha = (2.0 / alpha) * lap_alpha + (n - 2 - 2 * alpha) * grad2_f * e_alpha.values
    return j_free_base, j_free_alpha


def check_conformal_pde(m: ConformalMetric, budget: HypothesisBudget) -> list[CheckReport]:
    """Pointwise sup-residual checks of the elliptic inequality family.

    Base form:   2 Lap f + (n-2)|grad f|^2        <= e^{2f} / ((n-1) j)
    alpha form:  (2/a) Lap e^{af} + (n-2-2a)|grad f|^2 e^{af}
                                                   <= e^{(2+a) f} / ((n-1) j)

    The base form is an exact pointwise restatement of the curvature
    floor and reports a genuine pass/fail; the alpha form is a derived
    consequence and reports prerequisite-failed when the floor fails.
    """
    n = m.dim
    j = budget.j
    alpha = budget.resolved_alpha(n)
    floor = check_scalar_lower_bound(m, 1.0 / j)

    base_fd, alpha_fd = _pde_fields(m, alpha, 4)
    base_sp, alpha_sp = _pde_fields(m, alpha, "spectral")
    rhs_base = np.exp(2.0 * m.f.values) / ((n - 1) * j)
    rhs_alpha = np.exp((2.0 + alpha) * m.f.values) / ((n - 1) * j)

    res_base = base_fd - rhs_base
    res_alpha = alpha_fd - rhs_alpha
    disc_base = float(np.abs(res_base - (base_sp - rhs_base)).max())
    disc_alpha = float(np.abs(res_alpha - (alpha_sp - rhs_alpha)).max())

    lhs_b = float(res_base.max())
    base_report = make_check(
        "conformal_pde",
        lhs_b,
        0.0,
        "elliptic-inequality-base",
        _tolerance(max(_scale(lhs_b, 0.0), float(np.abs(rhs_base).max())), disc_base),
        details={"j": j, "disc_allowance": disc_base},
    )

    lhs_a = float(res_alpha.max())
    alpha_report = make_check(
        "conformal_pde_alpha",
        lhs_a,
        0.0,
        "elliptic-inequality-alpha",
        _tolerance(max(_scale(lhs_a, 0.0), float(np.abs(rhs_alpha).max())), disc_alpha),
        prereq_failed=not floor.passed,
        details={"j": j, "alpha": alpha, "disc_allowance": disc_alpha},
    )
    return [base_report, alpha_report]


def _grad_integral(field_values: np.ndarray, m: ConformalMetric, accuracy) -> float:
    f = ScalarField(m.spec, field_values)
    return integrate(gradient_norm_sq(f, m.background, accuracy=accuracy), m.background)


def check_sobolev_triple(m: ConformalMetric, budget: HypothesisBudget) -> list[CheckReport]:
    """The three integrated gradient estimates implied by the curvature floor.

    1.  int |grad f|^2          <= V0^{2/n} Vol0^{(n-2)/n} / ((n-1) j)
    2.  int |grad e^{-f}|^2     <= Vol0 / (j (n-1)(n+2))
    3.  int |grad e^{a f/2}|^2  <= a^2 V0^{(2+a)/n} Vol0^{(n-2-a)/n}
                                   / (4 (n-2-2a)(n-1) j)

    Prerequisites: the curvature floor at eps = 1/j and Vol(M_j) <= V0.
    """
    n = m.dim
    j = budget.j
    alpha = budget.resolved_alpha(n)
    vol0 = m.background.torus_volume
    volj = volume(m)

    floor = check_scalar_lower_bound(m, 1.0 / j)
    prereq_bad = (not floor.passed) or volj > budget.V0 * (1 + REL_TOL)
    prereq_info = {
        "j": j,
        "volume": volj,
        "curvature_floor_status": floor.status,
        "volume_cap_ok": bool(volj <= budget.V0 * (1 + REL_TOL)),
    }

    reports = []
    triples = [
        (
            "sobolev_log_gradient",
            "sobolev-log-gradient",
            m.f.values,
            budget.V0 ** (2.0 / n) * vol0 ** ((n - 2.0) / n) / ((n - 1) * j),
        ),
        (
            "sobolev_inverse_gradient",
            "sobolev-inverse-gradient",
            np.exp(-m.f.values),
            vol0 / (j * (n - 1) * (n + 2)),
        ),
        (
            "sobolev_alpha_gradient",
            "sobolev-alpha-gradient",
            np.exp(0.5 * alpha * m.f.values),
            alpha**2
            * budget.V0 ** ((2.0 + alpha) / n)
            * vol0 ** ((n - 2.0 - alpha) / n)
            / (4.0 * (n - 2 - 2 * alpha) * (n - 1) * j),
        ),
    ]
    for name, tag, vals, rhs in triples:
        lhs = _grad_integral(vals, m, 4)
        disc = abs(lhs - _grad_integral(vals, m, "spectral"))
        reports.append(
            make_check(
                name,
                lhs,
                rhs,
                tag,
                _tolerance(_scale(lhs, rhs), disc),
                prereq_failed=prereq_bad,
                details=dict(prereq_info, disc_allowance=disc, alpha=alpha),
            )
        )
    return reports


# ---------------------------------------------------------------------------
# integral sandwich bounds
# ---------------------------------------------------------------------------


def jensen_sandwich(m: ConformalMetric, budget: HypothesisBudget) -> list[CheckReport]:
    """Two-sided control of the negative-power integrals.

    Vol0^{(n+2)/n} / Volj^{2/n} <= int e^{-2f} dV0 <= Cneg
    Vol0^{(n+1)/n} / Volj^{1/n} <= int e^{-f}  dV0 <= sqrt(Cneg) Vol0^{1/2}

    The lower bounds are convexity (Jensen) consequences and are tight
    exactly for constant exponents.
    """
    n = m.dim
    vol0 = m.background.torus_volume
    volj = volume(m)
    i2 = integrate(ScalarField(m.spec, np.exp(-2.0 * m.f.values)), m.background)
    i1 = integrate(ScalarField(m.spec, np.exp(-m.f.values)), m.background)

    rows = [
        ("jensen_lower_exp2", "jensen-lower-exp2", vol0 ** ((n + 2.0) / n) / volj ** (2.0 / n), i2),
        ("cap_exp2", "negative-integral-cap", i2, budget.Cneg),
        ("jensen_lower_exp1", "jensen-lower-exp1", vol0 ** ((n + 1.0) / n) / volj ** (1.0 / n), i1),
        ("cap_exp1", "negative-integral-cap-sqrt", i1, math.sqrt(budget.Cneg) * math.sqrt(vol0)),
    ]
    return [
        make_check(name, lhs, rhs, tag, _tolerance(_scale(lhs, rhs)),
                   details={"volume": volj, "int_exp_minus_2f": i2, "int_exp_minus_f": i1})
        for name, tag, lhs, rhs in rows
    ]


# ---------------------------------------------------------------------------
# C0 lower bound via the subharmonic mean-value trick
# ---------------------------------------------------------------------------


def c0_lower_bound(m: ConformalMetric, r: float, j: int) -> list[CheckReport]:
    """Lower C0 control of e^{2f} from geodesic-ball averages of e^{-2f}.

    With A = max over centers of the ball average of e^{-2f} and an
    auxiliary-function offset kappa, the bound reads

        (A + kappa)^{-1} <= min e^{2f}.

    Two reports are emitted: the recentred offset
    ``kappa = e^{2 pi a} - e^{pi a}`` (which vanishes as j grows), and
    the loose variant with offset ``e^{2 pi a}`` kept for comparison,
    where ``a = g0_11 / sqrt((n-1) j)``.

    The radius is clipped to ``pi * sqrt(lam_min)`` (the embedded-ball
    safe radius for the background); the clip is recorded.
    """
    if j < 1:
        raise ValueError("j must be at least 1")
    if not 0.0 < r <= math.pi:
        raise ValueError("ball radius must satisfy 0 < r <= pi")
    n = m.dim
    floor = check_scalar_lower_bound(m, 1.0 / j)

    lam_min, _ = m.background.eig_bounds
    r_safe = math.pi * math.sqrt(lam_min)
    r_eff = min(r, r_safe)
    clipped = r_eff < r

    neg2 = ScalarField(m.spec, np.exp(-2.0 * m.f.values))
    avg_max, arg_point = ball_average_max(neg2, m.background, r_eff)
    rhs = float(np.exp(2.0 * m.f.values.min()))

    a = float(m.background.entries[0, 0]) / math.sqrt((n - 1) * j)
    offsets = [
        ("c0_lower_bound", "c0-ball-lower-bound", math.exp(TWO_PI * a) - math.exp(math.pi * a)),
        ("c0_lower_bound_loose", "c0-ball-lower-bound-loose", math.exp(TWO_PI * a)),
    ]
    reports = []
    for name, tag, kappa in offsets:
        lhs = 1.0 / (avg_max + kappa)
        reports.append(
            make_check(
                name,
                lhs,
                rhs,
                tag,
                _tolerance(_scale(lhs, rhs)),
                prereq_failed=not floor.passed,
                details={
                    "j": j,
                    "radius_requested": r,
                    "radius_used": r_eff,
                    "radius_clipped": clipped,
                    "ball_average_max": avg_max,
                    "ball_average_argmax": list(arg_point),
                    "offset": kappa,
                    "aux_rate": a,
                },
            )
        )
    return reports


# ---------------------------------------------------------------------------
# uniform integrability
# ---------------------------------------------------------------------------


def ui_from_lp(m: ConformalMetric, p: float) -> tuple[float, float]:
    """L^p certificate for uniform integrability.

    Returns ``(Cp, q)`` with Cp the integral of e^{p f} against the
    background volume and q = (p - n)/p, certifying
    ``Vol_g(E) <= Cp * Vol_{g0}(E)^q`` for measurable E.
    """
    n = m.dim
    if p <= n:
        raise ValueError(f"p must exceed the dimension {n}, got {p}")
    cp = integrate(ScalarField(m.spec, np.exp(p * m.f.values)), m.background)
    return float(cp), float((p - n) / p)


def default_mask_family(
    spec: GridSpec,
    metric: FlatMetric,
    seed: int,
    n_centers: int = 24,
    n_radii: int = 6,
    extra_centers=(),
) -> list[RegionMask]:
    """Geodesic balls at scrambled low-discrepancy centers.

    Radii run geometrically from twice the grid spacing to pi, so the
    family witnesses concentration at every resolvable scale.  Extra
    centers (e.g. a field's peak) may be appended by the caller.
    """
    if n_centers < 1 or n_radii < 1:
        raise ValueError("need at least one center and one radius")
    sampler = scipy.stats.qmc.Halton(d=spec.dim, scramble=True, seed=seed)
    centers = [TWO_PI * row for row in sampler.random(n_centers)]
    centers.extend(np.asarray(c, dtype=float) for c in extra_centers)
    radii = np.geomspace(2.0 * spec.max_spacing, math.pi, n_radii)
    masks = []
    for c in centers:
        for r in radii:
            mask = ball_mask(spec, metric, c, float(r))
            if not mask.is_empty:
                masks.append(mask)
    return masks


def ui_fit(
    m: ConformalMetric, masks: list[RegionMask], budget: HypothesisBudget
) -> CheckReport:
    """Test ``Vol_g(E) <= Cui * Vol_{g0}(E)^q`` over the supplied masks.

    Reports the worst ratio ``Vol_g(E) / Vol_{g0}(E)^q`` and the mask
    attaining it.  Empty masks contribute nothing.
    """
    if not masks:
        raise ValueError("mask family must be nonempty")
    worst = -math.inf
    worst_label = None
    checked = 0
    for mask in masks:
        if mask.is_empty:
            continue
        vg = volume_of_region(m, mask)
        v0 = mask.flat_volume(m.background)
        ratio = vg / v0**budget.q
        checked += 1
        if ratio > worst:
            worst = ratio
            worst_label = mask.label or f"mask#{checked}"
    if checked == 0:
        raise ValueError("all masks in the family are empty")
    return make_check(
        "uniform_integrability",
        worst,
        budget.Cui,
        "uniform-integrability",
        _tolerance(_scale(worst, budget.Cui)),
        details={"q": budget.q, "masks_checked": checked, "worst_mask": worst_label},
    )


# ---------------------------------------------------------------------------
# negative-scalar background obstruction
# ---------------------------------------------------------------------------


def negative_scalar_obstruction(
    vol0: float, budget: HypothesisBudget, n: int
) -> CheckReport:
    """Consistency cap for conformal factors over a unit-scalar-negative base.

    rhs = vol0^{(n-2)/n} * (V0^{2/n}/j - vol0^{2/n}).  A negative rhs is
    a contradiction: no conformal factor with curvature floor -1/j can
    live over a background of that volume.  Otherwise the report carries
    the implied gradient-energy cap rhs / ((n-2)(n-1)).

    The sign boundary sits exactly at vol0 = V0 / j^{n/2}; for n = 3
    this is the familiar 3/2-power decay (noted in the details).
    """
    if vol0 <= 0:
        raise ValueError("background volume must be positive")
    if n < 3:
        raise ValueError("the obstruction needs dimension at least 3")
    j = budget.j
    rhs = vol0 ** ((n - 2.0) / n) * (budget.V0 ** (2.0 / n) / j - vol0 ** (2.0 / n))
    contradiction = rhs < 0.0
    details = {
        "j": j,
        "vol0": vol0,
        "contradiction": bool(contradiction),
        "gradient_cap": None if contradiction else rhs / ((n - 2) * (n - 1)),
        "boundary_vol0": budget.V0 / j ** (n / 2.0),
        "n_is_3_power": "j^{-3/2}" if n == 3 else f"j^{{-{n}/2}}",
    }
    return make_check(
        "negative_scalar_obstruction",
        0.0,
        rhs,
        "negative-scalar-obstruction",
        _tolerance(_scale(0.0, rhs)),
        details=details,
    )


# ---------------------------------------------------------------------------
# spectral gap of the background (used by the consistency checks)
# ---------------------------------------------------------------------------


def first_nonzero_eigenvalue(metric: FlatMetric) -> float:
    """First nonzero eigenvalue of the (negative) Laplacian of g0.

    Plane waves e^{i k.theta} diagonalise the constant-coefficient
    Laplacian with eigenvalue k^T g0^{-1} k; the minimum over nonzero
    integer vectors is found inside a window sized from the recorded
    eigenvalue bounds.  It is always at least 1/lam_max.
    """
    from itertools import product as iproduct

    inv = metric.inverse
    lam_min, lam_max = metric.eig_bounds
    window = int(math.ceil(math.sqrt(lam_max / lam_min))) + 1
    best = math.inf
    for k in iproduct(range(-window, window + 1), repeat=metric.dim):
        if not any(k):
            continue
        kv = np.asarray(k, dtype=float)
        best = min(best, float(kv @ inv @ kv))
    return best


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("name", "j", "lhs", "rhs", "slack", "pass", "tolerance", "tag")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "PASS" if value else "FAIL"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _status_cell(report: CheckReport) -> str:
    return {"pass": "PASS", "fail": "FAIL", "prereq": "PREREQ"}[report.status]


def reports_to_json(reports: list[CheckReport]) -> str:
    import json

    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2) + "\n"


def reports_to_csv(reports: list[CheckReport], j: int | None = None) -> str:
    """Flat CSV with fixed, documented columns (one row per report)."""
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        jval = j if j is not None else r.details.get("j", "")
        lines.append(
            ",".join(
                [
                    r.name,
                    _csv_cell(jval),
                    _csv_cell(r.lhs),
                    _csv_cell(r.rhs),
                    _csv_cell(r.slack),
                    _status_cell(r),
                    _csv_cell(r.tolerance),
                    r.equation_tag,
                ]
            )
        )
    return "\n".join(lines) + "\n"
