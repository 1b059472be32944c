"""
Tests for the ECBF primitives
Poles, barrier chain, conservative velocity, constraint gradient and the
initial-condition check
"""

import numpy as np
import pytest

import ecbf_core as ecbf
import quad_dynamics as qd
from exceptions import DegenerateGeometryError, InvalidGainsError


def test_published_gains_poles():
    p1, p2 = ecbf.poles(36.0, 22.0)
    assert p1 == pytest.approx(1.7798, abs=1e-4)
    assert p2 == pytest.approx(20.2202, abs=1e-4)
    assert p1 * p2 == pytest.approx(36.0)
    assert p1 + p2 == pytest.approx(22.0)


def test_complex_poles_rejected():
    with pytest.raises(InvalidGainsError):
        ecbf.poles(100.0, 2.0)
    with pytest.raises(InvalidGainsError):
        ecbf.make_gains(-1.0, 5.0)


def test_validate_gains_reports_without_raising():
    good = ecbf.validate_gains(36.0, 22.0)
    bad = ecbf.validate_gains(100.0, 2.0)
    assert good.valid and good['reason'] == ''
    assert not bad.valid
    assert 'complex' in bad['reason']
    assert bad['p1'] is None


def test_barrier_values(geom):
    rel = ecbf.relative_state([0, 0, 1], [0, 0, 0], [2, 0, 1], [-1, 0, 0])
    assert geom.safety_distance == pytest.approx(0.8)
    assert ecbf.barrier(rel, geom) == pytest.approx(4.0 - 0.64)
    assert ecbf.barrier_dot(rel, geom) == pytest.approx(-4.0)
    assert ecbf.barrier_dot_true(rel) == pytest.approx(-4.0)
    assert ecbf.barrier_ddot(rel, np.zeros(3)) == pytest.approx(2.0)


def test_conservative_velocity_points_at_ego():
    rel = ecbf.relative_state([0, 0, 0], [0, 0, 0], [3, 4, 0], [0, 2, 0])
    vt = ecbf.conservative_vrel(rel)
    assert np.linalg.norm(vt) == pytest.approx(2.0)
    np.testing.assert_allclose(vt, -2.0 * np.array([0.6, 0.8, 0.0]))


def test_conservative_hdot_never_exceeds_true_hdot():
    rng = np.random.default_rng(0)
    p_rel = rng.normal(scale=3.0, size=(100000, 3))
    v_rel = rng.normal(scale=2.0, size=(100000, 3))
    for p, v in zip(p_rel, v_rel):
        rel = ecbf.RelativeState(p, v)
        assert ecbf.barrier_dot(rel) <= ecbf.barrier_dot_true(rel) + 1e-12


def test_pair_direction_undefined_at_zero_distance():
    rel = ecbf.relative_state([1, 1, 1], [0, 0, 0], [1, 1, 1], [0, 0, 0])
    with pytest.raises(DegenerateGeometryError):
        rel.e_ij


def test_geometry_validation():
    with pytest.raises(ValueError):
        ecbf.SafetyGeometry(-0.1, 0.2, 0.2, 0.2)
    with pytest.raises(ValueError):
        ecbf.SafetyGeometry(0.0, 0.0, 0.0, 0.0)
    obstacle = ecbf.SafetyGeometry(0.4, 0.2, 0.2, 0.2).for_pair(1.0, obstacle=True)
    assert obstacle.safety_distance == pytest.approx(1.4)


def test_constraint_matches_gradient_value(params, gains, geom):
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(size=3), rng.normal(size=3), qd.quat_normalize(rng.normal(size=4)), np.zeros(3)])
    u = rng.uniform(1, 4, size=4)
    p_j, v_j = x[:3] + np.array([1.5, 0.5, 0.0]), rng.normal(size=3)
    G, _, _ = ecbf.ecbf_constraint_gradient(x, u, p_j, v_j, geom, gains, params)
    rel = ecbf.relative_state(x[:3], x[3:6], p_j, v_j)
    accel = qd.translational_accel_vector(x, u, params)
    assert G == pytest.approx(ecbf.ecbf_constraint(rel, geom, gains, accel))


@pytest.mark.parametrize('frozen', [None, 1.3])
def test_constraint_gradient_matches_central_differences(params, gains, geom, frozen):
    rng = np.random.default_rng(2)
    eps = 1e-6
    for _ in range(20):
        x = np.concatenate([rng.normal(size=3), rng.normal(size=3),
                            qd.quat_normalize(rng.normal(size=4)), rng.normal(size=3)])
        u = rng.uniform(0.5, 5.0, size=4)
        p_j = x[:3] + rng.normal(scale=2.0, size=3)
        v_j = rng.normal(size=3)

        def G_of(xx, uu):
            return ecbf.ecbf_constraint_gradient(xx, uu, p_j, v_j, geom, gains, params, frozen_speed=frozen)[0]

        _, dGx, dGu = ecbf.ecbf_constraint_gradient(x, u, p_j, v_j, geom, gains, params, frozen_speed=frozen)
        num_x = np.array([(G_of(x + eps * e, u) - G_of(x - eps * e, u)) / (2 * eps) for e in np.eye(qd.NX)])
        num_u = np.array([(G_of(x, u + eps * e) - G_of(x, u - eps * e)) / (2 * eps) for e in np.eye(qd.NU)])
        scale = max(1.0, np.max(np.abs(num_x)), np.max(np.abs(num_u)))
        assert np.max(np.abs(dGx - num_x)) <= 1e-5 * scale
        assert np.max(np.abs(dGu - num_u)) <= 1e-5 * scale


def test_initial_conditions_far_apart(gains, geom):
    rel = ecbf.relative_state([0, 0, 1], [0, 0, 0], [5, 0, 1], [0, 0, 0])
    report = ecbf.validate_initial_conditions(rel, geom, gains)
    assert report.valid
    assert not report['on_boundary']
    assert report['nu1'] == pytest.approx(gains.p1 * report['nu0'])


def test_initial_conditions_touching_is_boundary(gains):
    geom = ecbf.SafetyGeometry(0.5, 0.5, 0.25, 0.25)
    rel = ecbf.relative_state([0, 0, 0], [0, 0, 0], [1.0, 0, 0], [0, 0, 0])
    report = ecbf.validate_initial_conditions(rel, geom, gains)
    assert report['nu0'] == 0.0
    assert report.valid
    assert report['on_boundary']


def test_initial_conditions_fast_closing_outside_c1(gains, geom):
    rel = ecbf.relative_state([0, 0, 0], [0, 0, 0], [1.0, 0, 0], [-3.0, 0, 0])
    report = ecbf.validate_initial_conditions(rel, geom, gains)
    assert report['in_c0']
    assert not report['in_c1']
    assert not report.valid


def test_conservative_velocity_example(geom):
    rel = ecbf.RelativeState(np.array([2.0, 0.0, 0.0]), np.array([0.0, 3.0, 0.0]))
    np.testing.assert_allclose(ecbf.conservative_vrel(rel), [-3.0, 0.0, 0.0])
    assert ecbf.barrier_dot(rel, geom) == pytest.approx(-12.0)


def test_barrier_dot_matches_finite_difference_along_conservative_velocity(geom):
    rng = np.random.default_rng(6)
    eps = 1e-6
    for _ in range(50):
        rel = ecbf.RelativeState(rng.normal(scale=3.0, size=3), rng.normal(scale=2.0, size=3))
        vt = ecbf.conservative_vrel(rel)
        ahead = ecbf.RelativeState(rel.p_rel + eps * vt, rel.v_rel)
        behind = ecbf.RelativeState(rel.p_rel - eps * vt, rel.v_rel)
        numeric = (ecbf.barrier(ahead, geom) - ecbf.barrier(behind, geom)) / (2 * eps)
        assert ecbf.barrier_dot(rel, geom) == pytest.approx(numeric, rel=1e-5, abs=1e-5)


def test_constraint_is_affine_in_ego_acceleration(geom, gains):
    rng = np.random.default_rng(8)
    for _ in range(50):
        rel = ecbf.RelativeState(rng.normal(scale=3.0, size=3), rng.normal(scale=2.0, size=3))
        a1, a2 = rng.normal(scale=5.0, size=(2, 3))
        G = [ecbf.ecbf_constraint(rel, geom, gains, a) for a in (a1 + a2, a1, a2, np.zeros(3))]
        assert G[0] - G[1] - G[2] + G[3] == pytest.approx(0.0, abs=1e-9)
