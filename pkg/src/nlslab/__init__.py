"""nlslab: a numerical laboratory for damped and controlled cubic Schrodinger flows.

Spectral solvers on flat tori (split-step with exact substeps, implicit damped
stepper through the J = 1 + i a (1-Delta)^{-1} a reformulation), duality-exact
control synthesis, dispersive-norm estimators, and quadrature studies of
highest-weight spherical harmonics on the 3-sphere.
"""

from .torus import (
    TorusSpec,
    SpectralField,
    DampingProfile,
    Slab,
    build_cutoff,
    random_field,
    inner,
    re_inner,
    sobolev_norm,
    bessel_norm,
    smoothing_apply,
    mode_box_mask,
    shell_mask,
    planck_step,
    weighted_wavenumber,
    cubic_term,
    quartic_integral,
)
from .trajectory import Trajectory
from .evolution import (
    Free,
    Nonlinear,
    LinearPotential,
    Remainder,
    Damped,
    EvolutionError,
    BlowupDetected,
    CorrectorDiverged,
    JInversionFailed,
    EnergyLedger,
    energy,
    step_free,
    solve,
    solve_backward,
    solve_J,
    apply_J,
    apply_sandwich,
    decay_ledger,
)

__version__ = "0.1.0"

__all__ = [
    "TorusSpec",
    "SpectralField",
    "DampingProfile",
    "Slab",
    "build_cutoff",
    "random_field",
    "inner",
    "re_inner",
    "sobolev_norm",
    "bessel_norm",
    "smoothing_apply",
    "mode_box_mask",
    "shell_mask",
    "planck_step",
    "weighted_wavenumber",
    "cubic_term",
    "quartic_integral",
    "Trajectory",
    "Free",
    "Nonlinear",
    "LinearPotential",
    "Remainder",
    "Damped",
    "EvolutionError",
    "BlowupDetected",
    "CorrectorDiverged",
    "JInversionFailed",
    "EnergyLedger",
    "energy",
    "step_free",
    "solve",
    "solve_backward",
    "solve_J",
    "apply_J",
    "apply_sandwich",
    "decay_ledger",
    "__version__",
]
