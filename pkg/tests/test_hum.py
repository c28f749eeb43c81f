import numpy as np
import pytest

from nlslab import (
    DampingProfile,
    Nonlinear,
    Slab,
    SpectralField,
    TorusSpec,
    build_cutoff,
    random_field,
)
from nlslab.evolution import solve
from nlslab.hum import (
    CGStalled,
    ControlSetup,
    adjoint_solve,
    control_regularity_check,
    control_source,
    gramian_apply,
    hum_solve,
    observability_constant,
)
from nlslab.torus import lambda_grid, mode_box_mask


def _re_pair(x, y):
    return float(np.sum(x.real * y.real + x.imag * y.imag))


def _slab_setup(n=16, hw=0.15, T=1.0, dt=0.02, s=0.0, w=None):
    spec = TorusSpec(1, (1.0,), (n,))
    prof = build_cutoff(spec, [Slab(0, 0.15, hw)])
    return ControlSetup(spec, prof, T=T, dt=dt, s=s, w=w)


# ---------------------------------------------------------------------------
# setup validation


def test_setup_validation():
    spec = TorusSpec(1, (1.0,), (16,))
    prof = DampingProfile(spec, np.ones(16))
    with pytest.raises(ValueError):
        ControlSetup(spec, prof, T=-1.0, dt=0.1)
    with pytest.raises(ValueError):
        ControlSetup(spec, prof, T=1.0, dt=0.3)
    with pytest.raises(ValueError):
        ControlSetup(spec, prof, T=1.0, dt=0.1, s=1.5)


# ---------------------------------------------------------------------------
# the constant-profile case: every operator is a Fourier multiplier


def test_gramian_closed_form_constant_profile():
    # free flow, a = 1: S phi0 = T (1+lambda)^{-s} phi0 exactly, because the
    # trapezoid weights sum to T and the phases cancel mode by mode
    spec = TorusSpec(1, (1.0,), (16,))
    prof = DampingProfile(spec, np.ones(16))
    rng = np.random.default_rng(0)
    lam = lambda_grid(spec)
    for s in (0.0, 0.5, -0.5, 1.0):
        setup = ControlSetup(spec, prof, T=1.0, dt=0.05, s=s)
        phi0 = random_field(spec, rng, s=1.0)
        out = gramian_apply(setup, phi0)
        oracle = 1.0 * (1.0 + lam) ** (-s) * phi0.coeffs
        assert np.max(np.abs(out.coeffs - oracle)) < 1e-13


def test_observability_constant_profile_is_T():
    # in the weighted geometry the constant-profile Gramian is T times the
    # identity for every s
    spec = TorusSpec(1, (1.0,), (16,))
    prof = DampingProfile(spec, np.ones(16))
    for s in (0.0, 0.5):
        rep = observability_constant(ControlSetup(spec, prof, T=0.7, dt=0.035, s=s), 8)
        assert rep.lambda_min == pytest.approx(0.7, rel=1e-12)
        assert rep.lambda_max == pytest.approx(0.7, rel=1e-12)


def test_regularity_constant_profile_flat():
    # phi0 = (1+lambda_k)^s target / T mode by mode, so the regularity ratio
    # is exactly 1/T across the whole family, for every s
    spec = TorusSpec(1, (1.0,), (64,))
    prof = DampingProfile(spec, np.ones(64))
    for s in (0.0, 0.5, -0.5):
        setup = ControlSetup(spec, prof, T=0.8, dt=0.02, s=s)
        rep = control_regularity_check(setup, [1, 4, 16], tol=1e-10)
        for _, _, ratio in rep.rows:
            assert ratio == pytest.approx(1.25, rel=1e-9)
        assert rep.ratio_spread == pytest.approx(1.0, rel=1e-9)


# ---------------------------------------------------------------------------
# structural properties of the Gramian


def test_gramian_self_adjoint_and_psd():
    setup = _slab_setup()
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = random_field(setup.spec, rng, s=1.0)
        q = random_field(setup.spec, rng, s=1.0)
        Sp = gramian_apply(setup, p).coeffs
        Sq = gramian_apply(setup, q).coeffs
        lhs = _re_pair(Sp, q.coeffs)
        rhs = _re_pair(p.coeffs, Sq)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
        assert _re_pair(Sp, p.coeffs) > 0


def test_gramian_self_adjoint_with_potential():
    # linearized around a nonlinear trajectory the pairing conservation is
    # still step-exact, so self-adjointness survives at roundoff level
    spec = TorusSpec(1, (1.0,), (32,))
    rng = np.random.default_rng(2)
    w0 = random_field(spec, rng, s=2.0, norm=0.8)
    w = solve(Nonlinear(), w0, 1.0, 0.02)
    prof = build_cutoff(spec, [Slab(0, 0.15, 0.15)])
    setup = ControlSetup(spec, prof, T=1.0, dt=0.02, s=0.0, w=w)
    for _ in range(5):
        p = random_field(spec, rng, s=1.0)
        q = random_field(spec, rng, s=1.0)
        Sp = gramian_apply(setup, p).coeffs
        Sq = gramian_apply(setup, q).coeffs
        lhs = _re_pair(Sp, q.coeffs)
        rhs = _re_pair(p.coeffs, Sq)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_gramian_scales_quadratically_in_profile():
    # S is linear in the sandwich operator, so scaling a by c scales S by c^2
    setup = _slab_setup()
    spec = setup.spec
    scaled = ControlSetup(spec, setup.profile.scaled(2.0), T=setup.T, dt=setup.dt)
    rng = np.random.default_rng(3)
    p = random_field(spec, rng, s=1.0)
    base = gramian_apply(setup, p).coeffs
    big = gramian_apply(scaled, p).coeffs
    assert np.max(np.abs(big - 4.0 * base)) < 1e-12 * np.max(np.abs(big))


def test_gramian_zero_input():
    setup = _slab_setup()
    out = gramian_apply(setup, SpectralField.zero(setup.spec))
    assert np.all(out.coeffs == 0)


def test_control_supported_in_region():
    setup = _slab_setup()
    rng = np.random.default_rng(4)
    phi = adjoint_solve(setup, random_field(setup.spec, rng, s=1.0))
    g = control_source(setup, phi)
    off = setup.profile.values == 0.0
    for j in range(0, len(g), 10):
        vals = SpectralField(setup.spec, g.coeffs[j]).values()
        assert np.max(np.abs(vals[off])) < 1e-12


# ---------------------------------------------------------------------------
# control synthesis


def test_hum_solve_matches_dense_gramian():
    setup = _slab_setup(n=16)
    spec = setup.spec
    c = np.zeros(16, complex)
    c[1] = 1.0
    c[-2] = 0.5
    target = SpectralField(spec, c)
    res = hum_solve(setup, target, tol=1e-8)
    assert res.terminal_ratio <= 1e-8
    assert res.cg_iterations <= 60
    assert np.max(np.abs(res.achieved_initial.coeffs - c)) < 1e-8

    # dense oracle: assemble the real 32x32 Gramian matrix column by column
    dim = 32
    M = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        cc = e[:16] + 1j * e[16:]
        out = gramian_apply(setup, SpectralField(spec, cc)).coeffs
        M[:, j] = np.concatenate([out.real, out.imag])
    assert np.max(np.abs(M - M.T)) < 1e-13
    b = np.concatenate([c.real, c.imag])
    xd = np.linalg.solve(0.5 * (M + M.T), b)
    phi_dense = xd[:16] + 1j * xd[16:]
    assert np.max(np.abs(res.phi0.coeffs - phi_dense)) < 1e-6


def test_hum_solve_zero_target():
    setup = _slab_setup()
    res = hum_solve(setup, SpectralField.zero(setup.spec))
    assert res.cg_iterations == 0
    assert np.all(res.phi0.coeffs == 0)
    assert np.max(np.abs(res.control.coeffs)) == 0.0


def test_hum_solve_stalls_without_observability():
    setup = _slab_setup()
    dead = ControlSetup(setup.spec, setup.profile.scaled(0.0), T=setup.T, dt=setup.dt)
    rng = np.random.default_rng(5)
    with pytest.raises(CGStalled):
        hum_solve(dead, random_field(setup.spec, rng, s=1.0), maxiter=20)


def test_hum_solve_faces_region_3d():
    spec = TorusSpec(3, (1.0, 1.0, 1.0), (8, 8, 8))
    prof = build_cutoff(
        spec, [Slab(0, 0.0, 0.25), Slab(1, 0.0, 0.25), Slab(2, 0.0, 0.25)]
    )
    rng = np.random.default_rng(21)
    u = random_field(spec, rng, s=1.0, norm=1.0)
    target = SpectralField(spec, np.where(mode_box_mask(spec, 2), u.coeffs, 0.0))
    res = hum_solve(ControlSetup(spec, prof, T=0.5, dt=0.0125), target, tol=1e-6)
    assert res.terminal_ratio <= 1e-6
    assert res.cg_iterations <= 50


# ---------------------------------------------------------------------------
# observability reports


def test_lambda_min_stabilizes_with_mode_cutoff():
    setup = _slab_setup(n=64)
    reps = {N: observability_constant(setup, N) for N in (8, 16, 32)}
    vals = {N: r.lambda_min for N, r in reps.items()}
    assert vals[8] > 0
    # nested subspaces: nonincreasing
    assert vals[8] >= vals[16] - 1e-12
    assert vals[16] >= vals[32] - 1e-12
    # stabilization: the limit is already visible at N=16
    assert abs(vals[16] - vals[32]) <= 0.01 * vals[16]
    assert vals[8] == pytest.approx(0.006592, abs=5e-5)
    assert reps[32].minimizer is not None
    assert reps[8].symmetry_defect < 1e-12


def test_lanczos_path_matches_dense():
    setup = _slab_setup(n=64)
    dense = observability_constant(setup, 16)
    lanczos = observability_constant(setup, 16, dense_limit=4)
    assert lanczos.method == "lanczos"
    assert lanczos.lambda_min == pytest.approx(dense.lambda_min, rel=1e-6)
    assert lanczos.lambda_max == pytest.approx(dense.lambda_max, rel=1e-6)


def test_trivial_region_gives_exact_zero():
    setup = _slab_setup(n=64)
    dead = ControlSetup(setup.spec, setup.profile.scaled(0.0), T=setup.T, dt=setup.dt)
    rep = observability_constant(dead, 8)
    assert rep.lambda_min == 0.0
    assert rep.lambda_max == 0.0
    assert rep.observability_constant() == np.inf


def test_report_serializes():
    setup = _slab_setup(n=16)
    rep = observability_constant(setup, 4)
    d = rep.to_dict()
    assert d["lambda_min"] == rep.lambda_min
    assert d["method"] == "dense"


# ---------------------------------------------------------------------------
# regularity of controls


def test_regularity_family_bounded_in_frequency():
    # unit-H^1 single-mode targets of growing frequency: the measured dual
    # data norm must not grow with k (the spread is dominated by the lowest
    # mode, which genuinely aligns with the worst-observed direction)
    spec = TorusSpec(1, (1.0,), (64,))
    prof = build_cutoff(spec, [Slab(0, 0.5, 0.25)])
    setup = ControlSetup(spec, prof, T=1.0, dt=0.02, s=0.5)
    rep = control_regularity_check(setup, [1, 2, 4, 8, 16], tol=1e-8)
    ratios = [r for _, _, r in rep.rows]
    low = ratios[0]
    assert all(r <= 10.0 * low for r in ratios[1:])
    assert rep.ratio_spread < 10.0
    assert rep.epsilon == pytest.approx(0.5)


def test_regularity_rejects_s_at_one():
    setup = _slab_setup(s=1.0)
    with pytest.raises(ValueError):
        control_regularity_check(setup, [1])
