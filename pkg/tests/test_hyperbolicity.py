import numpy as np
import pytest

from hypctrl import hyperbolicity as hyp
from hypctrl import systems
from hypctrl.errors import NoSplittingError, NotHyperbolicError
from hypctrl.systems import Box, ControlSequence, ControlSystem, OrbitSegment

U0 = ControlSequence.constant([0.0, 0.0])


def constant_orbit(point, n, u=U0):
    return OrbitSegment(-n // 2, np.tile(point, (n + 1, 1)), u)


def rotation_system(theta=0.7):
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])

    def forward(x, u):
        return x @ R.T

    def inverse(x, u):
        return x @ R

    def jac_state(x, u):
        x = np.asarray(x, float)
        return np.broadcast_to(R, x.shape[:-1] + (2, 2)).copy()

    def jac_control(x, u):
        x = np.asarray(x, float)
        return np.zeros(x.shape[:-1] + (2, 1))

    return ControlSystem("rotation", 2, Box([0.0], [0.0]), forward, inverse, jac_state, jac_control)


def test_splitting_linear_toy_exact(toy):
    orbit = constant_orbit(np.zeros(2), 80)
    # identity initial frame makes the diagonal eigendirections exact after one step
    s = hyp.estimate_splitting(toy, orbit, settle=1, init_frame=np.eye(2))
    assert s.d_plus == 1 and s.d_minus == 1
    assert np.allclose(np.abs(s.unstable_at(0)[:, 0]), [1.0, 0.0], atol=1e-14)
    assert np.allclose(np.abs(s.stable_at(0)[:, 0]), [0.0, 1.0], atol=1e-14)


def test_splitting_henon_fixed_point(henon, henon_fp):
    orbit = constant_orbit(henon_fp["point"], 100)
    s = hyp.estimate_splitting(henon, orbit, settle=40)
    assert s.d_plus == 1
    e_u = henon_fp["evec_u"]
    got = s.unstable_at(0)[:, 0]
    assert min(np.linalg.norm(got - e_u), np.linalg.norm(got + e_u)) < 1e-10
    e_s = henon_fp["evec_s"]
    got_s = s.stable_at(0)[:, 0]
    assert min(np.linalg.norm(got_s - e_s), np.linalg.norm(got_s + e_s)) < 1e-10
    # invariance residual of the estimated frames
    assert hyp.estimate_splitting(henon, orbit, settle=40).invariance_residuals(henon, orbit).max() < 1e-6


def test_splitting_rejects_isometry():
    rot = rotation_system()
    orbit = constant_orbit(np.array([0.3, 0.1]), 80, ControlSequence.constant([0.0]))
    with pytest.raises(NoSplittingError):
        hyp.estimate_splitting(rot, orbit, settle=20)


def test_unstable_log_det_linear(toy):
    orbit = constant_orbit(np.zeros(2), 80)
    s = hyp.estimate_splitting(toy, orbit, settle=5, init_frame=np.eye(2))
    assert hyp.unstable_log_det(toy, orbit, s, 0, 3) == pytest.approx(3.0, abs=1e-12)


def test_unstable_log_det_henon_fixed_point(henon, henon_fp):
    orbit = constant_orbit(henon_fp["point"], 120)
    s = hyp.estimate_splitting(henon, orbit, settle=40)
    want = np.log2(abs(henon_fp["lam_u"]))
    assert hyp.unstable_log_det(henon, orbit, s, 0, 1) == pytest.approx(want, abs=1e-9)
    assert want == pytest.approx(1.707, abs=5e-4)


def test_unstable_log_det_cocycle_additivity(henon, henon_fp):
    orbit = constant_orbit(henon_fp["point"], 120)
    s = hyp.estimate_splitting(henon, orbit, settle=40)
    whole = hyp.unstable_log_det(henon, orbit, s, -5, 9)
    parts = hyp.unstable_log_det(henon, orbit, s, -5, 4) + hyp.unstable_log_det(henon, orbit, s, -1, 5)
    assert abs(whole - parts) < 1e-9


def test_unstable_log_det_range_error(toy):
    orbit = constant_orbit(np.zeros(2), 40)
    s = hyp.estimate_splitting(toy, orbit, settle=10, init_frame=np.eye(2))
    with pytest.raises(IndexError):
        hyp.unstable_log_det(toy, orbit, s, s.t1 - 1, 5)


def test_verify_hyperbolicity_linear(toy):
    orbit = constant_orbit(np.zeros(2), 80)
    s = hyp.estimate_splitting(toy, orbit, settle=10, init_frame=np.eye(2))
    rep = hyp.verify_hyperbolicity(toy, orbit, s, horizon=10)
    assert rep.lambda_est == pytest.approx(0.5, abs=2e-3)
    assert rep.c_est == pytest.approx(1.0, abs=1e-9)


def test_verify_hyperbolicity_henon(henon, henon_fp):
    orbit = constant_orbit(henon_fp["point"], 120)
    s = hyp.estimate_splitting(henon, orbit, settle=40)
    rep = hyp.verify_hyperbolicity(henon, orbit, s, horizon=10)
    want = max(abs(henon_fp["lam_s"]), 1.0 / abs(henon_fp["lam_u"]))
    assert rep.lambda_est == pytest.approx(want, abs=2e-3)
    assert want == pytest.approx(0.3063, abs=1e-4)
    assert rep.c_est >= 1.0


def test_verify_hyperbolicity_identity_fails(toy):
    ident = systems.linear_toy(expand=1.0 + 1e-12, contract=1.0)

    def jac(x, u):
        x = np.asarray(x, float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    ident.jac_state = jac
    orbit = constant_orbit(np.zeros(2), 60)
    fake = hyp.Splitting(0, np.tile(np.array([[1.0], [0.0]]), (5, 1, 1)), np.tile(np.array([[0.0], [1.0]]), (5, 1, 1)))
    with pytest.raises(NotHyperbolicError):
        hyp.verify_hyperbolicity(ident, orbit, fake, horizon=10)


def test_metric_rescaling_leaves_lambda(henon, henon_fp):
    orbit = constant_orbit(henon_fp["point"], 120)
    s = hyp.estimate_splitting(henon, orbit, settle=40)
    base = hyp.verify_hyperbolicity(henon, orbit, s, horizon=12)
    scaled = hyp.verify_hyperbolicity(henon, orbit, s, horizon=12, metric_weights=np.array([7.0, 7.0]))
    aniso = hyp.verify_hyperbolicity(henon, orbit, s, horizon=12, metric_weights=np.array([3.0, 0.25]))
    assert abs(base.lambda_est - scaled.lambda_est) < 1e-9
    assert abs(base.lambda_est - aniso.lambda_est) < 1e-9
    assert aniso.c_est >= base.c_est  # anisotropic weight costs constant, not rate


def test_expansion_equivalence(henon, toy, henon_fp):
    orbit = constant_orbit(np.zeros(2), 80)
    s = hyp.estimate_splitting(toy, orbit, settle=10, init_frame=np.eye(2))
    rep = hyp.verify_hyperbolicity(toy, orbit, s, horizon=10)
    assert hyp.check_expansion_equivalence(toy, orbit, s, rep, horizon=10)

    orbit_h = constant_orbit(henon_fp["point"], 120)
    sh = hyp.estimate_splitting(henon, orbit_h, settle=40)
    rep_h = hyp.verify_hyperbolicity(henon, orbit_h, sh, horizon=10)
    assert hyp.check_expansion_equivalence(henon, orbit_h, sh, rep_h, horizon=10)

    swapped = hyp.Splitting(sh.t0, sh.stable, sh.unstable)
    assert not hyp.check_expansion_equivalence(henon, orbit_h, swapped, rep_h, horizon=10)


def test_report_json_roundtrip(henon, henon_fp):
    import json

    orbit = constant_orbit(henon_fp["point"], 120)
    s = hyp.estimate_splitting(henon, orbit, settle=40)
    rep = hyp.verify_hyperbolicity(henon, orbit, s, horizon=8)
    payload = json.loads(rep.to_json(s, s.invariance_residuals(henon, orbit)))
    assert payload["dims"] == {"unstable": 1, "stable": 1}
    assert 0 < payload["lambda"] < 1
    assert payload["residuals"]["max"] < 1e-6
