"""Time-sampled fields on a uniform grid.

A `Trajectory` is the common currency between the evolution solvers, the
space-time norms, and the control machinery: coefficients of a field at times
t_j = t0 + j dt, all on one torus.  Storage is a single complex array of shape
(n_times, *resolution) in the same orthonormal-basis normalization as
`SpectralField`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import SpectralField, TorusSpec

__all__ = ["Trajectory"]


@dataclass
class Trajectory:
    spec: TorusSpec
    t0: float
    dt: float
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != self.spec.dim + 1:
            raise ValueError("trajectory array must be (n_times, *grid)")
        if self.coeffs.shape[1:] != self.spec.resolution:
            raise ValueError(
                f"slice shape {self.coeffs.shape[1:]} does not match grid {self.spec.resolution}"
            )
        if self.coeffs.shape[0] < 1:
            raise ValueError("trajectory needs at least one time slice")
        if self.dt < 0 or (self.coeffs.shape[0] > 1 and self.dt == 0):
            raise ValueError("dt must be positive for multi-slice trajectories")

    @classmethod
    def from_slices(cls, slices, t0: float, dt: float) -> "Trajectory":
        slices = list(slices)
        if not slices:
            raise ValueError("no slices")
        spec = slices[0].spec
        arr = np.stack([s.coeffs for s in slices])
        return cls(spec, float(t0), float(dt), arr)

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def duration(self) -> float:
        return self.dt * (len(self) - 1)

    @property
    def final_time(self) -> float:
        return self.t0 + self.duration

    def slice(self, j: int) -> SpectralField:
        return SpectralField(self.spec, self.coeffs[j].copy())

    def initial(self) -> SpectralField:
        return self.slice(0)

    def final(self) -> SpectralField:
        return self.slice(len(self) - 1)

    def sample(self, t: float) -> np.ndarray:
        """Coefficients at time t by linear interpolation (clamped to the range)."""
        if len(self) == 1:
            return self.coeffs[0]
        s = (t - self.t0) / self.dt
        j = int(np.floor(s))
        if j < 0:
            return self.coeffs[0]
        if j >= len(self) - 1:
            return self.coeffs[-1]
        w = s - j
        return (1.0 - w) * self.coeffs[j] + w * self.coeffs[j + 1]

    def reversed_conjugate(self) -> "Trajectory":
        """conj(u(T - t)) on the same grid; solves the same equation class backward."""
        return Trajectory(self.spec, self.t0, self.dt, np.conj(self.coeffs[::-1]).copy())

    def copy(self) -> "Trajectory":
        return Trajectory(self.spec, self.t0, self.dt, self.coeffs.copy())
