"""Periodic-grid calculus on flat n-tori.

Fields live on a uniform rectangular sample grid over [0, 2*pi)^n with
periodic topology.  A constant symmetric positive-definite matrix acts as
the background metric: it weights quadrature, gradient norms, Laplacians,
distances, and geodesic-ball membership.

Conventions
-----------
* grid values are stored row-major (C order) over the axes in order;
* the Laplacian is the trace form ``g^{lm} d_l d_m`` (negative spectrum:
  applied to sin(theta_1) under the unit metric it returns -sin(theta_1));
* quadrature is the uniform periodic rule, exact on trigonometric
  polynomials below the Nyquist band;
* distances minimise over lattice translates within one period per axis,
  which is sufficient for the two-sided eigenvalue bounds recorded on
  ``FlatMetric``.

All operations are pure functions over immutable inputs and are safe to
call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, reduce
from itertools import product

import numpy as np
from numpy.typing import NDArray

TWO_PI = 2.0 * math.pi

#: accuracy settings accepted by the difference operators
ACCURACIES = (2, 4, "spectral")

__all__ = [
    "TWO_PI",
    "ACCURACIES",
    "GridSpec",
    "ScalarField",
    "FlatMetric",
    "RegionMask",
    "derivative",
    "laplacian",
    "gradient_norm_sq",
    "partial_derivatives",
    "integrate",
    "flat_average",
    "flat_distance",
    "flat_distance_field",
    "ball_average",
    "ball_average_max",
    "ball_mask",
    "full_mask",
    "threshold_mask",
    "random_band_limited",
]


def _as_point(x, dim: int) -> NDArray[np.float64]:
    pt = np.asarray(x, dtype=float).reshape(-1)
    if pt.size != dim:
        raise ValueError(f"expected a point with {dim} coordinates, got {pt.size}")
    return pt


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic sample grid on [0, 2*pi)^n.

    Coordinates along axis i are theta = 2*pi*k/N_i for k = 0..N_i-1.
    Sample counts must be even (symmetric stencils) and at least 8
    (room for the 4th-order stencil).
    """

    dim: int
    res: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError("grid dimension must be at least 2")
        res = tuple(int(n) for n in np.atleast_1d(np.asarray(self.res, dtype=int)))
        if len(res) != self.dim:
            raise ValueError(f"need {self.dim} per-axis sample counts, got {len(res)}")
        for n in res:
            if n < 8:
                raise ValueError("grid too coarse: every axis needs at least 8 samples")
            if n % 2:
                raise ValueError("per-axis sample counts must be even")
        object.__setattr__(self, "res", res)

    @classmethod
    def cube(cls, dim: int, samples: int) -> "GridSpec":
        return cls(dim, (samples,) * dim)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.res

    @cached_property
    def npoints(self) -> int:
        return int(np.prod(self.res))

    @cached_property
    def spacings(self) -> tuple[float, ...]:
        return tuple(TWO_PI / n for n in self.res)

    @cached_property
    def max_spacing(self) -> float:
        return max(self.spacings)

    @cached_property
    def cell_volume(self) -> float:
        """Coordinate volume of one cell (metric factor not included)."""
        return float(np.prod(self.spacings))

    def axis_coordinates(self, axis: int) -> NDArray[np.float64]:
        return np.arange(self.res[axis]) * self.spacings[axis]

    def meshes(self) -> list[NDArray[np.float64]]:
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return list(np.meshgrid(*(self.axis_coordinates(i) for i in range(self.dim)), indexing="ij"))

    def nearest_index(self, point) -> tuple[int, ...]:
        pt = _as_point(point, self.dim)
        return tuple(
            int(round(pt[i] / self.spacings[i])) % self.res[i] for i in range(self.dim)
        )

    def flat_index(self, point) -> int:
        return int(np.ravel_multi_index(self.nearest_index(point), self.res))

    def point_at(self, flat_index: int) -> NDArray[np.float64]:
        multi = np.unravel_index(int(flat_index), self.res)
        return np.array([multi[i] * self.spacings[i] for i in range(self.dim)])


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real-valued samples on a :class:`GridSpec`, row-major over axes."""

    spec: GridSpec
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if vals.size != self.spec.npoints:
            raise ValueError(
                f"field length {vals.size} does not match grid ({self.spec.npoints} points)"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def grid(self) -> NDArray[np.float64]:
        """Values reshaped to the grid shape (read-only view)."""
        return self.values.reshape(self.spec.shape)

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> "ScalarField":
        return cls(spec, np.full(spec.npoints, float(value)))

    @classmethod
    def from_grid(cls, spec: GridSpec, array) -> "ScalarField":
        arr = np.asarray(array, dtype=float)
        if arr.shape != spec.shape:
            raise ValueError(f"array shape {arr.shape} does not match grid {spec.shape}")
        return cls(spec, arr.ravel())

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "ScalarField":
        """Sample ``fn(*meshes)`` on the grid."""
        return cls.from_grid(spec, np.asarray(fn(*spec.meshes()), dtype=float))

    def map(self, fn) -> "ScalarField":
        return ScalarField(self.spec, fn(self.values))


@dataclass(frozen=True, eq=False)
class FlatMetric:
    """Constant symmetric positive-definite background metric on the torus.

    The recorded two-sided bounds are eigenvalue bounds
    ``eig_bounds = (lam_min, lam_max)``; entrywise bounds on the matrix
    follow from them up to dimension factors.
    """

    entries: NDArray[np.float64]

    def __post_init__(self) -> None:
        mat = np.asarray(self.entries, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("metric must be a square matrix")
        if mat.shape[0] < 2:
            raise ValueError("metric dimension must be at least 2")
        if not np.allclose(mat, mat.T, rtol=1e-12, atol=1e-12):
            raise ValueError("metric must be symmetric")
        mat = 0.5 * (mat + mat.T)
        eig = np.linalg.eigvalsh(mat)
        if eig[0] <= 0.0:
            raise ValueError("metric must be positive definite")
        mat.flags.writeable = False
        object.__setattr__(self, "entries", mat)

    @classmethod
    def identity(cls, dim: int) -> "FlatMetric":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, diag) -> "FlatMetric":
        return cls(np.diag(np.asarray(diag, dtype=float)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def inverse(self) -> NDArray[np.float64]:
        inv = np.linalg.inv(self.entries)
        inv = 0.5 * (inv + inv.T)
        inv.flags.writeable = False
        return inv

    @cached_property
    def sqrt_det(self) -> float:
        return float(math.sqrt(np.linalg.det(self.entries)))

    @cached_property
    def eig_bounds(self) -> tuple[float, float]:
        eig = np.linalg.eigvalsh(self.entries)
        return float(eig[0]), float(eig[-1])

    @cached_property
    def torus_volume(self) -> float:
        """Volume of the whole torus under this metric."""
        return float(TWO_PI**self.dim * self.sqrt_det)

    def scaled(self, factor: float) -> "FlatMetric":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return FlatMetric(self.entries * float(factor))

    def length(self, vector) -> float:
        v = _as_point(vector, self.dim)
        return float(math.sqrt(v @ self.entries @ v))


def _require_dims(field: ScalarField, metric: FlatMetric) -> None:
    if field.spec.dim != metric.dim:
        raise ValueError(
            f"dimension mismatch: field is {field.spec.dim}-d, metric is {metric.dim}-d"
        )


def _wavenumbers(n: int) -> NDArray[np.float64]:
    return np.fft.fftfreq(n, d=1.0 / n)


def _diff_axis(arr: NDArray, axis: int, order: int, accuracy, h: float) -> NDArray:
    """Periodic derivative of ``arr`` along one axis."""
    if accuracy == "spectral":
        n = arr.shape[axis]
        k = _wavenumbers(n)
        if order == 1:
            mult = 1j * k
            mult[n // 2] = 0.0  # drop the Nyquist mode for odd derivatives
        else:
            mult = -(k**2)
        shape = [1] * arr.ndim
        shape[axis] = n
        return np.fft.ifft(np.fft.fft(arr, axis=axis) * mult.reshape(shape), axis=axis).real

    def roll(s: int) -> NDArray:
        return np.roll(arr, -s, axis=axis)

    if accuracy == 2:
        if order == 1:
            return (roll(1) - roll(-1)) / (2.0 * h)
        return (roll(1) - 2.0 * arr + roll(-1)) / (h * h)
    if accuracy == 4:
        if order == 1:
            return (-roll(2) + 8.0 * roll(1) - 8.0 * roll(-1) + roll(-2)) / (12.0 * h)
        return (-roll(2) + 16.0 * roll(1) - 30.0 * arr + 16.0 * roll(-1) - roll(-2)) / (
            12.0 * h * h
        )
    raise ValueError(f"accuracy must be one of {ACCURACIES}, got {accuracy!r}")


def derivative(field: ScalarField, axis: int, order: int = 1, accuracy=4) -> ScalarField:
    """Periodic central difference along ``axis`` (1st or 2nd derivative).

    The default 4th-order stencil is exact, up to rounding, on sampled
    trigonometric polynomials only in the spectral setting; with finite
    stencils the error is O(h^accuracy).
    """
    if not 0 <= axis < field.spec.dim:
        raise ValueError(f"axis {axis} out of range for a {field.spec.dim}-d grid")
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    h = field.spec.spacings[axis]
    out = _diff_axis(field.grid, axis, order, accuracy, h)
    return ScalarField(field.spec, out.ravel())


def partial_derivatives(field: ScalarField, accuracy=4) -> list[NDArray[np.float64]]:
    """First partials along every axis, as grid-shaped arrays."""
    arr = field.grid
    return [
        _diff_axis(arr, axis, 1, accuracy, field.spec.spacings[axis])
        for axis in range(field.spec.dim)
    ]


def laplacian(field: ScalarField, metric: FlatMetric, accuracy=4) -> ScalarField:
    """Trace Laplacian ``g^{lm} d_l d_m f`` for the constant metric.

    No Christoffel terms arise because the metric has constant
    coefficients.  Off-diagonal inverse-metric entries are handled with
    composed first derivatives.
    """
    _require_dims(field, metric)
    inv = metric.inverse
    spec = field.spec
    arr = field.grid
    out = np.zeros_like(arr)
    firsts: dict[int, NDArray] = {}
    for l in range(spec.dim):
        out += inv[l, l] * _diff_axis(arr, l, 2, accuracy, spec.spacings[l])
        for m in range(l + 1, spec.dim):
            if inv[l, m] == 0.0:
                continue
            if l not in firsts:
                firsts[l] = _diff_axis(arr, l, 1, accuracy, spec.spacings[l])
            cross = _diff_axis(firsts[l], m, 1, accuracy, spec.spacings[m])
            out += 2.0 * inv[l, m] * cross
    return ScalarField(spec, out.ravel())


def gradient_norm_sq(field: ScalarField, metric: FlatMetric, accuracy=4) -> ScalarField:
    """Pointwise squared gradient norm ``g^{lm} d_l f d_m f``."""
    _require_dims(field, metric)
    inv = metric.inverse
    parts = partial_derivatives(field, accuracy)
    out = np.zeros(field.spec.shape)
    for l in range(field.spec.dim):
        for m in range(field.spec.dim):
            if inv[l, m] != 0.0:
                out += inv[l, m] * parts[l] * parts[m]
    return ScalarField(field.spec, out.ravel())


def integrate(field: ScalarField, metric: FlatMetric) -> float:
    """Uniform-weight periodic quadrature of ``field`` against dV_g.

    Equivalent to the periodic trapezoidal rule; exact for constants and
    for mean-zero trigonometric modes resolved by the grid.
    """
    _require_dims(field, metric)
    return float(field.values.sum() * field.spec.cell_volume * metric.sqrt_det)


def flat_average(field: ScalarField, metric: FlatMetric) -> float:
    """Metric-volume average of ``field`` over the torus."""
    return integrate(field, metric) / metric.torus_volume


def _translate_offsets(dim: int) -> NDArray[np.float64]:
    return np.array(list(product((-TWO_PI, 0.0, TWO_PI), repeat=dim)))


def flat_distance(metric: FlatMetric, x, y) -> float:
    """Distance between torus points under the constant metric.

    Minimises the quadratic form over lattice translates of the
    difference within one period per axis; the recorded eigenvalue
    bounds keep the true minimiser inside that window.
    """
    dim = metric.dim
    d = _as_point(x, dim) - _as_point(y, dim)
    d = (d + math.pi) % TWO_PI - math.pi
    best = math.inf
    g = metric.entries
    for off in _translate_offsets(dim):
        v = d + off
        best = min(best, float(v @ g @ v))
    return math.sqrt(best)


def flat_distance_field(spec: GridSpec, metric: FlatMetric, center) -> ScalarField:
    """Distances from ``center`` to every grid point, as a field."""
    if spec.dim != metric.dim:
        raise ValueError("dimension mismatch between grid and metric")
    c = _as_point(center, spec.dim)
    meshes = spec.meshes()
    diffs = [((meshes[i] - c[i]) + math.pi) % TWO_PI - math.pi for i in range(spec.dim)]
    g = metric.entries
    best = np.full(spec.shape, np.inf)
    for off in _translate_offsets(spec.dim):
        q = np.zeros(spec.shape)
        vs = [diffs[i] + off[i] for i in range(spec.dim)]
        for l in range(spec.dim):
            q += g[l, l] * vs[l] * vs[l]
            for m in range(l + 1, spec.dim):
                if g[l, m] != 0.0:
                    q += 2.0 * g[l, m] * vs[l] * vs[m]
        np.minimum(best, q, out=best)
    return ScalarField(spec, np.sqrt(best).ravel())


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Boolean membership over a grid; stands in for a measurable subset."""

    spec: GridSpec
    membership: NDArray[np.bool_]
    label: str | None = None

    def __post_init__(self) -> None:
        mem = np.asarray(self.membership, dtype=bool).reshape(-1)
        if mem.size != self.spec.npoints:
            raise ValueError("mask length does not match grid")
        mem = mem.copy()
        mem.flags.writeable = False
        object.__setattr__(self, "membership", mem)

    @property
    def count(self) -> int:
        return int(self.membership.sum())

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    def flat_volume(self, metric: FlatMetric) -> float:
        """Coordinate-quadrature volume of the region under ``metric``."""
        return float(self.count * self.spec.cell_volume * metric.sqrt_det)

    def union(self, other: "RegionMask") -> "RegionMask":
        if other.spec != self.spec:
            raise ValueError("masks live on different grids")
        return RegionMask(self.spec, self.membership | other.membership)


def full_mask(spec: GridSpec) -> RegionMask:
    return RegionMask(spec, np.ones(spec.npoints, dtype=bool), label="all")


def ball_mask(spec: GridSpec, metric: FlatMetric, center, r: float) -> RegionMask:
    dist = flat_distance_field(spec, metric, center)
    c = _as_point(center, spec.dim)
    label = "ball(c=%s,r=%.4g)" % (np.array2string(c, precision=3, separator=","), r)
    return RegionMask(spec, dist.values <= r, label=label)


def threshold_mask(field: ScalarField, cutoff: float, above: bool = False) -> RegionMask:
    mem = field.values >= cutoff if above else field.values <= cutoff
    op = ">=" if above else "<="
    return RegionMask(field.spec, mem, label=f"threshold({op}{cutoff:.4g})")


def ball_average(field: ScalarField, metric: FlatMetric, center, r: float) -> float:
    """Quadrature mean of ``field`` over the grid points within distance r.

    Membership is by grid-point inclusion; there is no partial-cell
    weighting, so the boundary contributes an O(h) error.
    """
    _require_dims(field, metric)
    if not 0.0 < r <= math.pi:
        raise ValueError("ball radius must satisfy 0 < r <= pi")
    mask = flat_distance_field(field.spec, metric, center).values <= r
    n_in = int(mask.sum())
    if n_in == 0:
        raise ValueError("empty ball: radius is below the grid resolution")
    # uniform quadrature weights cancel in the mean
    return float(field.values[mask].mean())


def ball_average_max(
    field: ScalarField, metric: FlatMetric, r: float
) -> tuple[float, NDArray[np.float64]]:
    """Max over all grid centers of the ball average, with the maximiser.

    Uses circular FFT convolution with the ball indicator, which agrees
    with :func:`ball_average` at every grid center because ball
    membership depends only on the displacement.
    """
    _require_dims(field, metric)
    if not 0.0 < r <= math.pi:
        raise ValueError("ball radius must satisfy 0 < r <= pi")
    spec = field.spec
    origin = np.zeros(spec.dim)
    stencil = (flat_distance_field(spec, metric, origin).values <= r).reshape(spec.shape)
    n_in = int(stencil.sum())
    if n_in == 0:
        raise ValueError("empty ball: radius is below the grid resolution")
    sums = np.fft.irfftn(
        np.fft.rfftn(field.grid) * np.fft.rfftn(stencil.astype(float)), s=spec.shape
    )
    means = sums / n_in
    flat_arg = int(np.argmax(means))
    return float(means.ravel()[flat_arg]), spec.point_at(flat_arg)


def random_band_limited(
    spec: GridSpec,
    seed,
    kmax: int = 3,
    n_modes: int = 6,
    amplitude: float = 1.0,
    zero_mean: bool = False,
) -> ScalarField:
    """Random trigonometric polynomial with wavevectors in |k|_inf <= kmax.

    The sup norm is normalised to ``amplitude``.  Deterministic for a
    fixed seed.  ``kmax`` must stay below the Nyquist band of the grid.
    """
    if kmax < 1:
        raise ValueError("kmax must be at least 1")
    if 2 * kmax >= min(spec.res):
        raise ValueError("kmax exceeds the Nyquist band of the grid")
    rng = np.random.default_rng(seed)
    meshes = spec.meshes()
    out = np.zeros(spec.shape)
    chosen = 0
    while chosen < n_modes:
        k = rng.integers(-kmax, kmax + 1, size=spec.dim)
        if not np.any(k):
            continue
        phase = rng.uniform(0.0, TWO_PI)
        amp = rng.uniform(0.2, 1.0)
        arg = phase
        for i in range(spec.dim):
            arg = arg + k[i] * meshes[i]
        out += amp * np.cos(arg)
        chosen += 1
    if not zero_mean:
        out += rng.uniform(-0.3, 0.3)
    sup = float(np.abs(out).max())
    if sup == 0.0:
        raise ValueError("degenerate random field")
    return ScalarField(spec, (amplitude / sup) * out.ravel())
