import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochnf.autodiff import ScalarField, VectorField
from stochnf.config import ExperimentConfig
from stochnf.control import (
    ControllerSpec,
    PolePlacement,
    SingularControlError,
    bind,
    hybrid_jump,
    idealistic_control,
    place_poles,
    tracking_error_oracle,
    tracking_v,
    zero_noise_control,
)
from stochnf.estimator import IncrementEstimate
from stochnf.experiments import build_scenario
from stochnf.models import NormalFormDef, cosine_reference, example_normal_form, example_system
from stochnf.simulate import Scenario, generate_path, integrate
from stochnf.transform import build_transform, normal_form

NF = example_normal_form()
REF = cosine_reference(0.1, 0.01, 5.0, r=2)
POLES = place_poles([-3, -4])


def unit_nf(c_s=1.0, b=1.0):
    return NormalFormDef(1, 1, ScalarField.constant(1, 0.0), ScalarField.constant(1, c_s),
                         ScalarField.constant(1, b), VectorField(1, lambda z: [], m=0),
                         VectorField(1, lambda z: [], m=0))


def test_place_poles_examples():
    assert POLES.coefficients == (12.0, 7.0)
    assert POLES.stable and POLES.check()
    assert place_poles([-1]).coefficients == (1.0,)
    pp = place_poles([-1 + 1j, -1 - 1j])
    assert pp.coefficients == pytest.approx((2.0, 2.0))
    assert np.allclose(np.sort_complex(np.linalg.eigvals(pp.companion())), [-1 - 1j, -1 + 1j])


def test_place_poles_errors():
    with pytest.raises(ValueError):
        place_poles([-1 + 1j])
    with pytest.raises(ValueError):
        place_poles([0.0, -1.0])
    with pytest.raises(ValueError):
        place_poles([])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, -0.1), min_size=1, max_size=5))
def test_companion_eigenvalues_are_the_poles(roots):
    # det(rho I - A) is the characteristic polynomial; eigenvalues of repeated roots are ill-conditioned
    pp = place_poles(roots)
    A = pp.companion()
    scale = np.prod([1 + abs(r) for r in roots])
    for rho in roots:
        assert abs(np.linalg.det(rho * np.eye(pp.r) - A)) < 1e-9 * scale


def test_tracking_v_examples():
    y = REF(0.0)
    assert tracking_v(y[:2], y, POLES) == pytest.approx(y[2])
    assert tracking_v([0.0, 0.0], y, POLES) == pytest.approx(1.07, abs=1e-12)
    flat = PolePlacement((0.0, 0.0), ())
    assert tracking_v([0.5, 0.3], y, flat) == y[2]
    with pytest.raises(ValueError):
        tracking_v([0.0], y, POLES)


def test_idealistic_and_zero_noise_examples():
    z0 = np.zeros(3)
    assert idealistic_control(NF, z0, 123.0, 0.0) == 0.0
    assert zero_noise_control(NF, z0, 1.0) == -0.5
    z = np.array([0.01, 0.02, 0.03])
    # with c_s(z) != 0 the two laws differ by the noise term only
    diff = idealistic_control(NF, z, 2.0, 0.3) - zero_noise_control(NF, z, 0.3)
    assert diff == pytest.approx(-NF.c_s.value(z) * 2.0 / NF.b.value(z))
    nf0 = unit_nf(c_s=0.0, b=2.0)
    assert idealistic_control(nf0, [0.1], 50.0, 1.0) == zero_noise_control(nf0, [0.1], 1.0)
    c_d_equal = NormalFormDef(1, 1, ScalarField.constant(1, 0.7), ScalarField.constant(1, 0.0),
                              ScalarField.constant(1, 1.0), VectorField(1, lambda z: [], m=0),
                              VectorField(1, lambda z: [], m=0))
    assert zero_noise_control(c_d_equal, [0.0], 0.7) == 0.0


def test_singular_b_is_rejected():
    nf = unit_nf(b=1e-12)
    with pytest.raises(SingularControlError):
        zero_noise_control(nf, [0.0], 1.0)
    with pytest.raises(SingularControlError):
        idealistic_control(nf, [0.0], 0.0, 1.0)
    with pytest.raises(SingularControlError):
        hybrid_jump(nf, [0.0], [0.0], 0.1)


def test_hybrid_jump_examples():
    nf = unit_nf()
    u = hybrid_jump(nf, [0.0], [0.0], 0.02)
    assert u == pytest.approx(-0.02)
    assert nf.b.value([0.0]) * u == pytest.approx(-0.02)
    assert hybrid_jump(nf, [0.0], [0.0], 0.0) == 0.0
    assert hybrid_jump(NF, np.zeros(3), np.zeros(3), 0.5) == 0.0
    skipped = IncrementEstimate(1, 0.3, True, 0.0, np.nan)
    assert hybrid_jump(nf, [0.0], [0.0], skipped) == 0.0
    # c_s at the window start, b at the window end
    z_a, z_b = np.array([0.02, 0.0, 0.01]), np.array([0.0, 0.0, -0.03])
    expected = -NF.c_s.value(z_a) * 0.1 / NF.b.value(z_b)
    assert hybrid_jump(NF, z_a, z_b, 0.1) == pytest.approx(expected, rel=1e-15)


def test_controller_spec_validation():
    with pytest.raises(ValueError):
        ControllerSpec("bang_bang", "track", POLES)
    with pytest.raises(ValueError):
        ControllerSpec("zero_noise", "track")
    with pytest.raises(ValueError):
        ControllerSpec("hybrid", "track", POLES)
    with pytest.raises(ValueError):
        ControllerSpec("open_loop", "track", POLES)
    spec = ControllerSpec("hybrid", "track", POLES, epsilon=1e-3)
    assert spec.eps_steps(1e-6) == 1000
    with pytest.raises(ValueError):
        spec.eps_steps(3e-7)


def test_bind_checks():
    sys = example_system()
    with pytest.raises(ValueError, match="reference"):
        bind(ControllerSpec("zero_noise", "track", POLES), NF)
    with pytest.raises(ValueError, match="pole"):
        bind(ControllerSpec("zero_noise", "track", place_poles([-1])), NF, REF)
    with pytest.raises(ValueError, match="sys"):
        bind(ControllerSpec("hybrid", "track", POLES, epsilon=1e-3), NF, REF)
    with pytest.raises(ValueError):
        bind(ControllerSpec("hybrid", "track", POLES, epsilon=1e-3), NF, REF, sys, dt=7e-4)
    c = bind(ControllerSpec("idealistic", "track", POLES), NF, REF)
    assert c.needs_noise and not c.has_jumps
    with pytest.raises(ValueError):
        c.flow(0.0, np.zeros(3))
    h = bind(ControllerSpec("hybrid", "track", POLES, epsilon=1e-3), NF, REF, sys, dt=1e-6)
    assert h.has_jumps and not h.needs_noise
    assert bind(ControllerSpec("open_loop", "linearise", v=0.4), NF).flow(0.0, np.zeros(3)) == 0.4


def test_zero_noise_linearise_keeps_origin():
    cfg = ExperimentConfig(dt=1e-5)
    scn = build_scenario(cfg, family="zero_noise", task="linearise", t_final=0.1)
    tr = integrate(scn, generate_path(0, scn.dt, scn.n_steps))
    assert np.all(tr.z == 0)


def test_idealistic_path_independence():
    cfg = ExperimentConfig(dt=1e-5)
    scn = build_scenario(cfg, family="idealistic", t_final=1.0, x0=(0.02, 0.0, 0.01))
    a = integrate(scn, generate_path(0, scn.dt, scn.n_steps))
    b = integrate(scn, generate_path(1, scn.dt, scn.n_steps))
    assert np.max(np.abs(a.zeta - b.zeta)) < 1e-8
    assert np.max(np.abs(a.eta - b.eta)) > 1e-4


def test_idealistic_tracking_error_follows_linear_oracle():
    cfg = ExperimentConfig(dt=1e-5)
    scn = build_scenario(cfg, family="idealistic", t_final=1.0, record_stride=100)
    tr = integrate(scn, generate_path(2, scn.dt, scn.n_steps))
    refs = np.array([REF(t)[:2] for t in tr.t])
    theta = tr.zeta - refs
    oracle = tracking_error_oracle(POLES, theta[0], tr.t)
    scale = np.max(np.abs(oracle))
    assert np.max(np.abs(theta - oracle)) < 1e-3 * scale


def test_output_scaling_leaves_control_unchanged():
    kappa = 2.0
    sys = example_system()
    completion = ScalarField(3, lambda x: x[0] - x[2])
    scaled = sys.scaled_output(kappa)
    nf_k = normal_form(build_transform(scaled, completions=[completion]), scaled)
    nf_1 = normal_form(build_transform(sys, completions=[completion]), sys)
    spec = ControllerSpec("idealistic", "track", POLES)
    ref_k = cosine_reference(kappa * 0.1, kappa * 0.01, 5.0, r=2)
    common = dict(mode="x", dt=1e-5, t_final=0.002, x0=(0.01, 0.0, 0.0))
    a = integrate(Scenario(sys, nf_1, spec, REF, **common), generate_path(0, 1e-5, 200), backend="python")
    b = integrate(Scenario(scaled, nf_k, spec, ref_k, **common), generate_path(0, 1e-5, 200),
                  backend="python")
    assert np.allclose(b.u[:-1], a.u[:-1], rtol=1e-9, atol=1e-12)
    assert np.allclose(b.zeta, kappa * a.zeta, rtol=1e-9, atol=1e-13)
    assert np.allclose(b.x, a.x, rtol=1e-9, atol=1e-13)
