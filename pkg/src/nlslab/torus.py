"""Flat-torus spectral backbone: grids, fields, norms, damping profiles.

The domain is the flat torus R^d / (theta_1 Z x ... x theta_d Z), d in {1,2,3}.
Everything downstream (solvers, norms, sweeps) works in the Fourier basis

    phi_k(x) = exp(2 pi i k . (x/theta)) / sqrt(vol),   k in Z^d,

which is orthonormal in L^2, with Laplacian eigenvalue

    -Delta phi_k = lambda_k phi_k,    lambda_k = 4 pi^2 sum_i (k_i/theta_i)^2.

A `SpectralField` stores the coefficients c_k in this orthonormal basis, so
sum |c_k|^2 is exactly the squared L^2(M) norm.  Sobolev norms use the weight
<lambda>^s with <x> = sqrt(1+x^2):

    ||u||_{H^s}^2 = sum_k <lambda_k>^s |c_k|^2.

The smoothing operator (1-Delta)^{-sigma} acts diagonally as (1+lambda_k)^{-sigma}
(Bessel weight; note this is a different, equivalent weight family from <lambda>^s,
and the control module relies on the Bessel one so its duality identity is exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TorusSpec",
    "SpectralField",
    "DampingProfile",
    "Slab",
    "weighted_wavenumber",
    "sobolev_norm",
    "bessel_norm",
    "smoothing_apply",
    "build_cutoff",
    "planck_step",
    "random_field",
    "cubic_term",
    "quartic_integral",
    "mode_box_mask",
    "shell_mask",
]


def _as_tuple(x, dim: int, name: str) -> tuple:
    if np.isscalar(x):
        return (x,) * dim
    t = tuple(x)
    if len(t) != dim:
        raise ValueError(f"{name} must have length {dim}, got {len(t)}")
    return t


@dataclass(frozen=True)
class TorusSpec:
    """Geometry and grid for one flat torus.

    Parameters
    ----------
    dim : spatial dimension, 1 to 3.
    periods : side lengths theta_i > 0.
    resolution : grid points per axis (even, >= 4); the lattice modes per axis
        are the usual FFT integers -N/2 .. N/2-1.
    dealias_fraction : fraction of the Nyquist band treated as resolved when
        preconditions on product bandwidth are checked (products themselves are
        evaluated on zero-padded grids and are exact, see `cubic_term`).
    """

    dim: int
    periods: tuple
    resolution: tuple
    dealias_fraction: float = 2.0 / 3.0

    def __init__(self, dim, periods, resolution, dealias_fraction=2.0 / 3.0):
        if dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
        periods = _as_tuple(periods, dim, "periods")
        resolution = _as_tuple(resolution, dim, "resolution")
        if any(p <= 0 for p in periods):
            raise ValueError(f"periods must be positive, got {periods}")
        for n in resolution:
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"resolution entries must be even ints >= 4, got {resolution}")
        if not 0 < dealias_fraction <= 1:
            raise ValueError(f"dealias_fraction must be in (0,1], got {dealias_fraction}")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "periods", tuple(float(p) for p in periods))
        object.__setattr__(self, "resolution", tuple(int(n) for n in resolution))
        object.__setattr__(self, "dealias_fraction", float(dealias_fraction))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.resolution))

    def axis_modes(self, axis: int) -> np.ndarray:
        """Integer lattice modes along one axis in FFT order."""
        n = self.resolution[axis]
        return np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)

    def mode_arrays(self) -> list:
        """Broadcastable integer mode arrays, one per axis."""
        out = []
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = self.resolution[ax]
            out.append(self.axis_modes(ax).reshape(shape))
        return out

    def lambda_grid(self) -> np.ndarray:
        """Laplacian eigenvalues lambda_k = 4 pi^2 sum (k_i/theta_i)^2 on the grid."""
        lam = np.zeros(self.resolution)
        for ax, k in enumerate(self.mode_arrays()):
            lam = lam + (k / self.periods[ax]) ** 2
        return 4.0 * math.pi ** 2 * lam

    def grid_coordinates(self) -> list:
        """Broadcastable physical coordinate arrays x_i = theta_i j / N_i."""
        out = []
        for ax in range(self.dim):
            n = self.resolution[ax]
            shape = [1] * self.dim
            shape[ax] = n
            out.append((self.periods[ax] * np.arange(n) / n).reshape(shape))
        return out

    def __eq__(self, other):
        return (
            isinstance(other, TorusSpec)
            and self.dim == other.dim
            and self.periods == other.periods
            and self.resolution == other.resolution
        )

    def __hash__(self):
        return hash((self.dim, self.periods, self.resolution))


# Module-level caches keyed by spec; lambda grids are requested in every solver step.
_LAMBDA_CACHE: dict = {}


def lambda_grid(spec: TorusSpec) -> np.ndarray:
    key = (spec.dim, spec.periods, spec.resolution)
    got = _LAMBDA_CACHE.get(key)
    if got is None:
        got = spec.lambda_grid()
        got.setflags(write=False)
        _LAMBDA_CACHE[key] = got
    return got


def weighted_wavenumber(spec: TorusSpec, k: Sequence[int] | int) -> float:
    """Geometry-weighted wavenumber |k|_theta = 2 pi sqrt(sum (k_i/theta_i)^2).

    This is sqrt(lambda_k); it vanishes only at k = 0.
    """
    if np.isscalar(k):
        k = (k,)
    k = tuple(k)
    if len(k) != spec.dim:
        raise ValueError(f"mode must have {spec.dim} components, got {len(k)}")
    return 2.0 * math.pi * math.sqrt(sum((ki / ti) ** 2 for ki, ti in zip(k, spec.periods)))


@dataclass
class SpectralField:
    """One complex field on a torus, stored as orthonormal-basis coefficients.

    The coefficient array has the grid's shape (FFT mode order).  Conversions:
    values -> coeffs is fftn/N * sqrt(vol); coeffs -> values the inverse.  With
    this normalization sum |c_k|^2 == integral |u|^2 dx exactly (discrete Parseval).
    """

    spec: TorusSpec
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != self.spec.resolution:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match grid {self.spec.resolution}"
            )

    @classmethod
    def from_values(cls, spec: TorusSpec, values: np.ndarray) -> "SpectralField":
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != spec.resolution:
            raise ValueError(f"value shape {values.shape} does not match grid {spec.resolution}")
        c = np.fft.fftn(values) / spec.n_points * math.sqrt(spec.volume)
        return cls(spec, c)

    @classmethod
    def zero(cls, spec: TorusSpec) -> "SpectralField":
        return cls(spec, np.zeros(spec.resolution, dtype=np.complex128))

    def values(self) -> np.ndarray:
        return np.fft.ifftn(self.coeffs) * (self.spec.n_points / math.sqrt(self.spec.volume))

    def copy(self) -> "SpectralField":
        return SpectralField(self.spec, self.coeffs.copy())

    def norm_l2(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_same(other)
        return SpectralField(self.spec, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_same(other)
        return SpectralField(self.spec, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.spec, self.coeffs * scalar)

    __rmul__ = __mul__

    def _check_same(self, other):
        if self.spec != other.spec:
            raise ValueError("fields live on different tori")


def inner(f: SpectralField, g: SpectralField) -> complex:
    """Complex L^2 pairing (f, g) = integral f conj(g)."""
    f._check_same(g)
    return complex(np.vdot(g.coeffs, f.coeffs))


def re_inner(f: SpectralField, g: SpectralField) -> float:
    """Real L^2 pairing Re (f, g), the duality used by the control machinery."""
    return float(np.real(inner(f, g)))


def sobolev_norm(field: SpectralField, s: float) -> float:
    """H^s norm with bracket weights: sqrt(sum <lambda_k>^s |c_k|^2), <x> = sqrt(1+x^2)."""
    lam = lambda_grid(field.spec)
    w = (1.0 + lam * lam) ** (s / 2.0)
    return float(math.sqrt(np.sum(w * np.abs(field.coeffs) ** 2)))


def bessel_norm(field: SpectralField, s: float) -> float:
    """H^s norm with Bessel weights (1+lambda_k)^s, i.e. ||(1-Delta)^{s/2} u||_{L^2}.

    Equivalent to `sobolev_norm` up to constants; the control module uses this
    family because (1-Delta)^{+-s} is the smoothing operator appearing in its
    duality identity, which then holds exactly.
    """
    lam = lambda_grid(field.spec)
    w = (1.0 + lam) ** s
    return float(math.sqrt(np.sum(w * np.abs(field.coeffs) ** 2)))


def smoothing_apply(field: SpectralField, sigma: float) -> SpectralField:
    """Apply (1-Delta)^{-sigma}: multiply coefficients by (1+lambda_k)^{-sigma}.

    sigma may be negative (then this sharpens instead of smooths).  The operator
    is diagonal, positive, and exactly invertible: smoothing_apply(., -sigma)
    undoes it to machine precision.
    """
    lam = lambda_grid(field.spec)
    return SpectralField(field.spec, field.coeffs * (1.0 + lam) ** (-sigma))


def mode_box_mask(spec: TorusSpec, max_index: int) -> np.ndarray:
    """Boolean mask of lattice modes with |k_i| <= max_index on every axis."""
    mask = np.ones(spec.resolution, dtype=bool)
    for k in spec.mode_arrays():
        mask &= np.abs(k) <= max_index
    return mask


def shell_mask(spec: TorusSpec, lo: float, hi: float) -> np.ndarray:
    """Boolean mask of modes with sqrt(1+lambda_k) in [lo, hi)."""
    r = np.sqrt(1.0 + lambda_grid(spec))
    return (r >= lo) & (r < hi)


# ---------------------------------------------------------------------------
# Damping profiles


def planck_step(x: np.ndarray) -> np.ndarray:
    """C-infinity monotone step: 0 for x <= 0, 1 for x >= 1, exp(-1/x) glue between.

    planck_step(x) + planck_step(1-x) == 1, so tapers built from it are exact
    partitions across their transition bands.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[x >= 1.0] = 1.0
    mid = (x > 0.0) & (x < 1.0)
    if np.any(mid):
        xm = x[mid]
        with np.errstate(over="ignore"):
            out[mid] = 1.0 / (1.0 + np.exp(1.0 / xm - 1.0 / (1.0 - xm)))
    return out


@dataclass(frozen=True)
class Slab:
    """Periodic slab {x : dist(x_axis, center) < half_width} on one axis."""

    axis: int
    center: float
    half_width: float


@dataclass
class DampingProfile:
    """Spatial damping/control coefficient a(x) >= 0 on the torus grid.

    Profiles built by `build_cutoff` are C-infinity plateau bumps with values in
    [0, 1], identically 1 on the inner half of each slab and identically 0
    outside the described region (no tail: the glue vanishes exactly).  Profiles
    wrapped from explicit arrays may carry other amplitudes.
    """

    spec: TorusSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.resolution:
            raise ValueError(
                f"profile shape {self.values.shape} does not match grid {self.spec.resolution}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")
        if np.any(self.values < 0):
            raise ValueError("profile values must be nonnegative")

    def support_mask(self) -> np.ndarray:
        return self.values > 0

    def is_trivial(self) -> bool:
        return not np.any(self.values)

    def scaled(self, c: float) -> "DampingProfile":
        if c < 0:
            raise ValueError("scale must be nonnegative")
        return DampingProfile(self.spec, self.values * c)


def _slab_bump_1d(n: int, period: float, center: float, half_width: float) -> np.ndarray:
    x = period * np.arange(n) / n
    if 2.0 * half_width >= period:
        return np.ones(n)
    d = np.abs((x - center + period / 2.0) % period - period / 2.0)
    # plateau on the inner half, glue on the outer half of the slab
    return planck_step((half_width - d) / (half_width / 2.0))


def build_cutoff(spec: TorusSpec, omega_desc) -> DampingProfile:
    """Build a(x) for a control region omega.

    `omega_desc` is either a list of `Slab`s (the union is omega, a(x) the
    pointwise max of the per-slab bumps) or an explicit nonnegative array on
    the grid, used as-is.

    Raises ValueError on an empty slab list or a slab with nonpositive width.
    A slab with 2*half_width >= period covers its axis completely (a == 1 there).
    """
    if isinstance(omega_desc, np.ndarray):
        return DampingProfile(spec, omega_desc)
    slabs = list(omega_desc)
    if not slabs:
        raise ValueError("omega description has no slabs")
    values = np.zeros(spec.resolution)
    for slab in slabs:
        if not 0 <= slab.axis < spec.dim:
            raise ValueError(f"slab axis {slab.axis} out of range for dim {spec.dim}")
        if slab.half_width <= 0:
            raise ValueError("slab half_width must be positive")
        n = spec.resolution[slab.axis]
        bump = _slab_bump_1d(n, spec.periods[slab.axis], slab.center, slab.half_width)
        shape = [1] * spec.dim
        shape[slab.axis] = n
        values = np.maximum(values, bump.reshape(shape) * np.ones(spec.resolution))
    return DampingProfile(spec, values)


# ---------------------------------------------------------------------------
# Random data and exact polynomial products


def random_field(
    spec: TorusSpec,
    rng: np.random.Generator,
    s: float = 1.0,
    norm: float = 1.0,
    extra_decay: float = 1.0,
) -> SpectralField:
    """Random field with prescribed H^s norm (bracket convention).

    Coefficients are complex Gaussians damped by (1+lambda)^{-(s+extra_decay)/2},
    then rescaled so sobolev_norm(field, s) == norm exactly.  extra_decay > 0
    keeps the draw in H^s with room to spare rather than borderline.
    """
    lam = lambda_grid(spec)
    shape = spec.resolution
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c = g * (1.0 + lam) ** (-(s + extra_decay) / 2.0)
    f = SpectralField(spec, c)
    cur = sobolev_norm(f, s)
    if cur == 0.0:
        raise ValueError("degenerate random draw")
    f.coeffs *= norm / cur
    return f


def _padded_shape(shape: tuple, factor: int) -> tuple:
    return tuple(int(n * factor) for n in shape)


def pad_coeffs(coeffs: np.ndarray, factor: int = 2) -> np.ndarray:
    """Zero-pad FFT-ordered coefficients to a grid `factor` times finer."""
    src = np.fft.fftshift(coeffs)
    out_shape = _padded_shape(coeffs.shape, factor)
    out = np.zeros(out_shape, dtype=np.complex128)
    slices = tuple(
        slice((m - n) // 2, (m - n) // 2 + n) for n, m in zip(coeffs.shape, out_shape)
    )
    out[slices] = src
    return np.fft.ifftshift(out)


def crop_coeffs(coeffs: np.ndarray, shape: tuple) -> np.ndarray:
    """Inverse of `pad_coeffs`: keep the centered block of modes."""
    src = np.fft.fftshift(coeffs)
    slices = tuple(
        slice((m - n) // 2, (m - n) // 2 + n) for n, m in zip(shape, coeffs.shape)
    )
    return np.fft.ifftshift(src[slices])


def cubic_term(field: SpectralField) -> SpectralField:
    """|u|^2 u evaluated alias-free.

    The product is formed pointwise on a 2x zero-padded grid (exact for cubic
    products of grid-band-limited fields) and the result is cropped back to the
    resolved band.  Modes of the true product beyond the band are discarded,
    which is the usual pseudospectral projection.
    """
    spec = field.spec
    padded = pad_coeffs(field.coeffs, 2)
    vals = np.fft.ifftn(padded) * (padded.size / math.sqrt(spec.volume))
    cube = np.abs(vals) ** 2 * vals
    c_full = np.fft.fftn(cube) / padded.size * math.sqrt(spec.volume)
    return SpectralField(spec, crop_coeffs(c_full, spec.resolution))


def quartic_integral(field: SpectralField) -> float:
    """integral |u|^4 dx, exact for band-limited u (2x zero-padded quadrature)."""
    spec = field.spec
    padded = pad_coeffs(field.coeffs, 2)
    vals = np.fft.ifftn(padded) * (padded.size / math.sqrt(spec.volume))
    return float(np.mean(np.abs(vals) ** 4) * spec.volume)
