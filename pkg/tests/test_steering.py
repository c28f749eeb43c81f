import math

import numpy as np
import pytest

from nlslab import Slab, SpectralField, TorusSpec, build_cutoff, random_field
from nlslab.evolution import Nonlinear, energy, solve, solve_backward
from nlslab.hum import ControlSetup
from nlslab.steering import (
    BallExceeded,
    LegFailed,
    PicardDiverged,
    SteeringProblem,
    fixed_point_control,
    global_drive_to_zero,
    h1_from_energy,
    low_mode_bound,
    low_mode_control,
    picard_ball_search,
    two_point_control,
    zero_reference,
)
from nlslab.torus import bessel_norm
from nlslab.trajectory import Trajectory


def _slab_setup(T=1.0, dt=0.01, s=0.6):
    spec = TorusSpec(1, (1.0,), (32,))
    prof = build_cutoff(spec, [Slab(0, 0.5, 0.25)])
    return ControlSetup(spec, prof, T=T, dt=dt, s=s)


def _small_data(spec, norm=1e-2, seed=7):
    return random_field(spec, np.random.default_rng(seed), s=1.0, norm=norm)


# ---------------------------------------------------------------------------
# local fixed point around the zero trajectory


def test_trivial_data_steers_in_zero_iterations():
    setup = _slab_setup()
    res = fixed_point_control(
        SteeringProblem(setup, zero_reference(setup), SpectralField.zero(setup.spec))
    )
    assert res.iterations == 0
    assert res.terminal_miss == 0.0
    assert np.max(np.abs(res.control.coeffs)) == 0.0


def test_small_data_quadratic_collapse():
    setup = _slab_setup()
    res = fixed_point_control(
        SteeringProblem(setup, zero_reference(setup), _small_data(setup.spec))
    )
    assert res.iterations <= 10
    assert res.terminal_miss < 1e-7
    assert len(res.terminal_history) == 1
    # second update is quadratically smaller than the first
    assert res.update_sizes[1] < 1e-3 * res.update_sizes[0]
    assert all(f < 1.0 for f in res.contraction_factors)


def test_small_data_focusing_sign():
    setup = _slab_setup()
    res = fixed_point_control(
        SteeringProblem(setup, zero_reference(setup), _small_data(setup.spec), sign=-1)
    )
    assert res.iterations <= 10
    assert res.terminal_miss < 1e-7


def test_control_vanishes_off_the_region():
    setup = _slab_setup()
    res = fixed_point_control(
        SteeringProblem(setup, zero_reference(setup), _small_data(setup.spec))
    )
    off = setup.profile.values == 0.0
    assert off.any()
    for j in range(0, len(res.control), 20):
        slice_vals = SpectralField(setup.spec, res.control.coeffs[j]).values()
        assert np.max(np.abs(slice_vals[off])) < 1e-12


def test_steered_state_verified_by_independent_solve():
    setup = _slab_setup()
    u0 = _small_data(setup.spec)
    res = fixed_point_control(SteeringProblem(setup, zero_reference(setup), u0))
    redo = solve(Nonlinear(), u0, setup.T, setup.dt, source=res.control,
                 store_every=setup.n_steps)
    assert bessel_norm(redo.final(), setup.s) < 2e-7


def test_reference_must_solve_its_equation():
    setup = _slab_setup()
    w = solve(Nonlinear(), _small_data(setup.spec), setup.T, setup.dt, store_every=1)
    bad = Trajectory(setup.spec, 0.0, w.dt, w.coeffs.copy())
    bad.coeffs[-1] += 1e-3
    with pytest.raises(ValueError, match="does not solve"):
        SteeringProblem(setup, bad, _small_data(setup.spec))


def test_reference_source_must_live_in_the_region():
    setup = _slab_setup()
    spec = setup.spec
    # a source humped away from the slab around x = 0.5
    bump = np.exp(-80.0 * (spec.grid_coordinates()[0] - 0.75) ** 2)
    g_bad = SpectralField.from_values(spec, bump.astype(np.complex128))
    coeffs = np.broadcast_to(g_bad.coeffs, (setup.n_steps + 1,) + spec.resolution).copy()
    g1 = Trajectory(spec, 0.0, setup.dt, coeffs)
    with pytest.raises(ValueError, match="leaks"):
        SteeringProblem(setup, zero_reference(setup), SpectralField.zero(spec), g1=g1)


def test_large_data_raises_picard_diverged():
    setup = _slab_setup()
    big = random_field(setup.spec, np.random.default_rng(3), s=1.0, norm=2.5)
    with pytest.raises(PicardDiverged):
        fixed_point_control(
            SteeringProblem(setup, zero_reference(setup), big, max_corrections=2)
        )


def test_correction_passes_reach_leg_tolerance():
    # O(1) data around a nonzero reference: the dt^2 split defect forces
    # offset passes, which contract the verified miss by ~25x per pass
    setup = _slab_setup()
    u0 = random_field(setup.spec, np.random.default_rng(7), s=1.0, norm=2.0,
                      extra_decay=2.0)
    free = solve(Nonlinear(), u0, setup.T, setup.dt, store_every=1)
    reference = solve_backward(Nonlinear(), 0.9 * free.final(), setup.T, setup.dt,
                               store_every=1)
    res = fixed_point_control(
        SteeringProblem(setup, reference, u0, tol_terminal=1e-4, cg_tol=1e-7)
    )
    assert res.terminal_miss < 1e-4
    assert len(res.terminal_history) >= 2
    history = res.terminal_history
    assert all(h2 < h1 for h1, h2 in zip(history, history[1:]))
    assert history[-1] < 0.05 * history[0]


# ---------------------------------------------------------------------------
# low-mode reduction


def test_low_mode_bound_arithmetic():
    setup = _slab_setup()
    spec = setup.spec
    a = np.zeros(spec.resolution, dtype=np.complex128)
    b = np.zeros(spec.resolution, dtype=np.complex128)
    a[1] = 3e-3
    a[-2] = 0.1 + 4e-3j
    b[-2] = 0.1
    a[9] = 0.1  # outside the box: must not count toward the mismatch
    mm, tail, bound = low_mode_bound(
        setup, SpectralField(spec, a), SpectralField(spec, b), 4, 0.05
    )
    assert mm == pytest.approx(5e-3, rel=1e-12)
    lam = (2.0 * math.pi * 4.0) ** 2
    tail_hand = 2.0 * 0.05 * math.sqrt(1.0 + lam * lam) ** ((0.6 - 1.0) / 2.0)
    assert tail == pytest.approx(tail_hand, rel=1e-12)
    assert tail == pytest.approx(0.027536196191207216, rel=1e-10)
    assert bound == pytest.approx(mm + tail, rel=1e-12)


def test_low_mode_control_high_frequency_perturbation():
    # the data agrees with the reference on every mode below the cutoff, so
    # the mismatch term is exactly zero and the bound is the tail alone
    setup = _slab_setup()
    spec = setup.spec
    pert = np.zeros(spec.resolution, dtype=np.complex128)
    pert[9] = 1e-3
    pert[12] = 5e-4 + 2e-4j
    pert[-10] = 3e-4j
    u0 = SpectralField(spec, pert)
    e1 = bessel_norm(u0, 1.0)
    res = low_mode_control(
        SteeringProblem(setup, zero_reference(setup), u0), 8, e1, 0.12
    )
    assert res.low_mode_mismatch == 0.0
    assert res.h_s_bound == pytest.approx(res.tail_term)
    assert res.h_s_bound < 0.12
    assert res.steering.terminal_miss < 1e-8


def test_low_mode_control_rejections():
    setup = _slab_setup()
    u0 = _small_data(setup.spec)
    prob = SteeringProblem(setup, zero_reference(setup), u0)
    with pytest.raises(BallExceeded):
        low_mode_control(prob, 8, bessel_norm(u0, 1.0), 1e-4)
    with pytest.raises(ValueError, match="ceiling"):
        low_mode_control(prob, 8, 1e-6, 0.12)
    setup_s1 = _slab_setup(s=1.0)
    with pytest.raises(ValueError, match="s < 1"):
        low_mode_control(
            SteeringProblem(setup_s1, zero_reference(setup_s1), u0), 8, 1.0, 0.12
        )


# ---------------------------------------------------------------------------
# two-point transfer


def test_two_point_transfer_hits_target():
    setup = _slab_setup()
    u0 = _small_data(setup.spec)
    u1 = SpectralField(setup.spec, np.exp(0.7j) * u0.coeffs)
    res = two_point_control(setup, u0, u1)
    assert res.terminal_miss < 1e-6
    assert all(r.iterations <= 10 for r in res.leg_reports)
    # the reflected control and the second state live on [T/2, T]
    assert res.control_second.t0 == pytest.approx(setup.T / 2)
    assert res.state_second.t0 == pytest.approx(setup.T / 2)
    assert np.max(np.abs(res.state_first.initial().coeffs - u0.coeffs)) < 1e-14


def test_two_point_needs_even_steps():
    spec = TorusSpec(1, (1.0,), (32,))
    prof = build_cutoff(spec, [Slab(0, 0.5, 0.25)])
    setup = ControlSetup(spec, prof, T=0.25, dt=0.01, s=0.6)
    u0 = _small_data(spec)
    with pytest.raises(ValueError, match="even"):
        two_point_control(setup, u0, u0)


# ---------------------------------------------------------------------------
# global descent


def test_h1_from_energy_closed_form():
    spec = TorusSpec(1, (1.0,), (32,))
    c = np.zeros(spec.resolution, dtype=np.complex128)
    c[2] = 0.3
    u = SpectralField(spec, c)
    e = energy(u)
    bound = h1_from_energy(spec, e)
    assert bound == pytest.approx(math.sqrt(2 * e + 2 * math.sqrt(spec.volume * e)))
    assert bessel_norm(u, 1.0) <= bound


def test_global_descent_reaches_zero():
    setup = _slab_setup()
    u0 = random_field(setup.spec, np.random.default_rng(7), s=1.0, norm=1.0,
                      extra_decay=2.0)
    res = global_drive_to_zero(setup, u0, eta=0.1, max_legs=40, local_ball=0.25,
                               tol_final=1e-6)
    assert res.n_legs <= 40
    ratios = [res.energies[i + 1] / res.energies[i] for i in range(res.n_legs)]
    assert max(ratios) <= (1.0 - 0.1) ** 2 + 0.1
    assert all(e2 < e1 for e1, e2 in zip(res.energies, res.energies[1:]))
    assert res.final_miss < 1e-5
    # the last leg landed inside the ball that justified the final local steer
    last_state = res.leg_results[-1].state.final()
    assert bessel_norm(last_state, 1.0) <= 0.25


def test_global_descent_rejects_bad_eta():
    setup = _slab_setup()
    with pytest.raises(ValueError, match="eta"):
        global_drive_to_zero(setup, SpectralField.zero(setup.spec), eta=1.5)


# ---------------------------------------------------------------------------
# empirical ball radius


def test_picard_ball_search_brackets_a_radius():
    spec = TorusSpec(1, (1.0,), (32,))
    prof = build_cutoff(spec, [Slab(0, 0.5, 0.25)])
    setup = ControlSetup(spec, prof, T=0.5, dt=0.02, s=0.6)
    direction = random_field(spec, np.random.default_rng(5), s=1.0, norm=1.0)
    radius = picard_ball_search(setup, direction, lo=0.02, hi=1.5, rounds=3,
                                max_corrections=2, tol_terminal=1e-5)
    assert 0.02 <= radius < 1.5
