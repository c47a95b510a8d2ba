import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import example_closed_forms, rel_err
from stochnf.autodiff import ScalarField, VectorField
from stochnf.models import (
    DomainError,
    NewtonError,
    NormalFormDef,
    SystemDef,
    cosine_reference,
    example_b_x,
    example_c_d_x,
    example_c_s_x,
    example_normal_form,
    example_p_d_x,
    example_p_s_x,
    example_phi,
    example_phi_inverse_closed,
    example_system,
    example_zero_dynamics,
    newton_inverse,
    sample_ball,
)
from stochnf.operators import lie, stochastic_lie

SYS = example_system()


def test_example_fields_at_origin():
    x = np.zeros(3)
    assert SYS.h.value(x) == 0.0
    assert np.array_equal(SYS.f.value(x), [0.0, 0.0, 0.0])
    assert np.array_equal(SYS.g.value(x), [1.0, 0.0, 1.0])
    assert SYS.m_is_zero()
    assert SYS.guard(x) is None
    assert SYS.guard([0.0, 1.5, 0.0]) is not None


def test_system_rejects_mismatched_fields():
    with pytest.raises(ValueError, match="dimension"):
        SystemDef(3, SYS.f, SYS.g, SYS.l, ScalarField.coordinate(2, 0))


def test_sample_ball_is_inside_and_deterministic():
    pts = sample_ball([0.1, -0.2], 0.2, 200)
    assert pts.shape == (200, 2)
    assert np.all(np.abs(pts - [0.1, -0.2]) <= 0.2)
    assert np.array_equal(pts, sample_ball([0.1, -0.2], 0.2, 200))


def test_phi_at_origin():
    assert np.array_equal(example_phi()(np.zeros(3)), np.zeros(3))


def test_phi_round_trip():
    phi = example_phi()
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(size=3)
        x *= rng.uniform(0, 0.3) / np.linalg.norm(x)
        z = phi(x)
        assert np.max(np.abs(phi.inverse(z) - x)) < 1e-10
        assert np.max(np.abs(example_phi_inverse_closed(z) - x)) < 1e-12


def test_phi_vanishes_on_zero_dynamics_manifold():
    for eta in (-0.2, 0.05, 0.15):
        x = [1.5 * eta, math.asin(-eta), eta / 2]
        z = example_phi()(x)
        assert abs(z[0]) < 1e-15 and abs(z[1]) < 1e-15
        assert z[2] == pytest.approx(eta)


def test_newton_failure_reports_residual():
    F = VectorField(1, lambda x: [x[0] * x[0] + 1.0])
    with pytest.raises(NewtonError) as info:
        newton_inverse(F, [0.0], [0.3])
    assert info.value.residual > 0.5
    assert "residual" in str(info.value)


def test_closed_inverse_domain():
    with pytest.raises(DomainError):
        example_phi_inverse_closed([1.0, 0.0, 0.0])


def test_normal_form_at_origin():
    nf = example_normal_form()
    z = np.zeros(3)
    assert nf.r == 2 and nf.n == 3
    assert nf.b.value(z) == -2.0
    assert nf.c_s.value(z) == 0.0
    assert nf.c_d.value(z) == 0.0
    assert nf.check_b()


def test_normal_form_matches_operator_calculus():
    nf = example_normal_form()
    phi = example_phi()
    S1 = stochastic_lie(SYS.h, SYS).deterministic
    S2 = stochastic_lie(S1, SYS, order=2)
    Lg = lie(S1, SYS.g)
    for x in sample_ball(np.zeros(3), 0.3, 100, seed=9):
        z = phi(x)
        assert rel_err(nf.c_d.value(z), S2.deterministic.value(x)) < 1e-8
        assert rel_err(nf.c_s.value(z), S2.noise_coeff.value(x)) < 1e-8
        assert rel_err(nf.b.value(z), Lg.value(x)) < 1e-8


def test_internal_dynamics_match_symbolic():
    cf, _ = example_closed_forms()
    for x in sample_ball(np.zeros(3), 0.3, 50, seed=4):
        assert rel_err(example_p_d_x(x), cf["p_d"](*x)) < 1e-12
        assert rel_err(example_p_s_x(x), cf["p_s"](*x)) < 1e-12
        assert rel_err(example_c_d_x(x), cf["S2"](*x)) < 1e-12
        assert rel_err(example_c_s_x(x), cf["Ll_S1"](*x)) < 1e-12
        assert rel_err(example_b_x(x), cf["Lg_S1"](*x)) < 1e-12
        assert cf["Lg_phi3"](*x) == 0


def test_normal_form_drift_and_diffusion_layout():
    nf = example_normal_form()
    z = np.array([0.01, -0.02, 0.03])
    d = nf.drift(z, 0.5)
    assert d[0] == z[1]
    assert d[1] == pytest.approx(nf.c_d.value(z) + 0.5 * nf.b.value(z))
    s = nf.diffusion(z)
    assert s[0] == 0.0 and s[1] == nf.c_s.value(z) and s[2] == nf.p_s.value(z)[0]


def test_normal_form_dimension_checks():
    nf = example_normal_form()
    with pytest.raises(ValueError):
        NormalFormDef(3, 3, nf.c_d, nf.c_s, nf.b, nf.p_d, nf.p_s)
    with pytest.raises(ValueError):
        NormalFormDef(0, 3, nf.c_d, nf.c_s, nf.b, nf.p_d, nf.p_s)


def test_zero_dynamics_values():
    zd = example_zero_dynamics()
    assert zd.drift(0.0) == 0.0 and zd.diffusion(0.0) == 0.0
    assert zd.drift(0.1) == pytest.approx(-0.2 + 9e-3 / (2 * (0.01 - 1)), rel=1e-14)
    assert zd.drift(0.1) == pytest.approx(-0.204545, abs=1e-6)
    A, F = zd.linearization()
    assert A == pytest.approx(-2.0, abs=1e-6) and F == pytest.approx(3.0, abs=1e-9)
    assert A - F ** 2 / 2 == pytest.approx(-6.5, abs=1e-6)
    with pytest.raises(DomainError):
        zd.drift(1.0)
    with pytest.raises(DomainError):
        zd.diffusion(-1.2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.3, 0.3))
def test_zero_dynamics_from_internal_coordinate(eta):
    x = [1.5 * eta, math.asin(-eta), eta / 2]
    zd = example_zero_dynamics()
    assert abs(example_p_d_x(x) - zd.drift(eta)) < 1e-10
    assert abs(example_p_s_x(x) - zd.diffusion(eta)) < 1e-10


def test_cosine_reference_values():
    ref = cosine_reference(0.1, 0.01, 5.0, r=2)
    y = ref(0.0)
    assert y[0] == pytest.approx(0.11, abs=1e-15)
    assert y[1] == pytest.approx(0.0, abs=1e-15)
    assert y[2] == pytest.approx(-0.25, abs=1e-15)
    assert ref.check_consistency(np.linspace(0, 3, 13))
    flat = cosine_reference(0.3, 0.0, 5.0, r=2)
    for t in (0.0, 1.0, 2.5):
        assert np.array_equal(flat(t), [0.3, 0.0, 0.0])
    with pytest.raises(ValueError):
        cosine_reference(0.1, 0.01, 5.0, r=0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 20), st.floats(-1, 1), st.floats(0.1, 10))
def test_cosine_reference_harmonic_identity(t, alpha, omega):
    ref = cosine_reference(0.1, alpha, omega, r=2)
    y = ref(t)
    assert y[2] == pytest.approx(-omega ** 2 * (y[0] - 0.1), abs=1e-9 * max(1, omega ** 2))


def test_reference_consistency_detects_mismatch():
    from stochnf.models import ReferenceSignal

    bad = ReferenceSignal(1, lambda t: np.array([t * t, t]))
    assert not bad.check_consistency([1.0])


def test_output_scaling():
    s = SYS.scaled_output(2.0)
    x = [0.1, 0.2, 0.3]
    assert s.output(x) == pytest.approx(2 * SYS.output(x))
