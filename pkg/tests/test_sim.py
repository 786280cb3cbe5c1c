import numpy as np
import pytest

from nanol.exceptions import FilterFailure
from nanol.filters import NanoConfig
from nanol.models import (
    NoiseConfig, forward_kinematics, landmark_layout, legged_layout, leg_b, make_leg_measurement,
    measurement_map, quadruped_legs,
)
from nanol.sim import (
    LANDMARKS, LEGGED_PROFILE, CampaignSpec, TrajectoryProfile, contact_schedule,
    generate_ground_truth, initial_covariance, integrate_inputs, make_filter, run_log,
    run_monte_carlo, run_trial, solve_joint_angles, synthesize_legged, synthesize_sensors,
    truth_state,
)

SHORT = TrajectoryProfile(duration=2.0)


@pytest.fixture(scope="module")
def gt30():
    return generate_ground_truth()


@pytest.fixture(scope="module")
def gt_short():
    return generate_ground_truth(SHORT)


# ------------------------------------------------------------------ trajectory

def test_profile_defaults():
    p = TrajectoryProfile()
    assert (p.duration, p.rate, p.substeps) == (30.0, 100.0, 10)
    assert p.gyro_amp == (0.5, 0.5, 0.5) and p.gyro_freq == (0.2, 0.3, 0.1)
    assert p.accel_amp == (0.5, 0.5, 0.5) and p.accel_freq == (0.15, 0.25, 0.2)
    assert p.n_samples == 3001


@pytest.mark.parametrize("kwargs", [
    {"duration": 0.0}, {"rate": -1.0}, {"substeps": 0},
    {"gyro_amp": (1.0, 2.0)}, {"accel_freq": (0.1, 0.0, 0.1)},
])
def test_profile_validation(kwargs):
    with pytest.raises(ValueError):
        TrajectoryProfile(**kwargs)


def test_ground_truth_shape_and_group(gt30):
    assert gt30.X.shape == (3001, 5, 5)
    np.testing.assert_allclose(np.diff(gt30.t), 0.01, atol=1e-12)
    RtR = np.einsum("nji,njk->nik", gt30.R, gt30.R)
    assert np.abs(RtR - np.eye(3)).max() < 1e-10
    assert np.allclose(gt30.X[:, 3:, :3], 0.0) and np.allclose(gt30.X[:, 3:, 3:], np.eye(2))


def test_ground_truth_frozen_values(gt30):
    np.testing.assert_allclose(gt30.p[0], 0.0)
    np.testing.assert_allclose(gt30.v[0], 0.0)
    np.testing.assert_allclose(gt30.accel[0], [0.5, 0.5, 10.31], atol=1e-12)
    np.testing.assert_allclose(gt30.omega[0], 0.0, atol=0)


def test_stationary_trajectory():
    prof = TrajectoryProfile(duration=3.0, gyro_amp=(0, 0, 0), accel_amp=(0, 0, 0))
    gt = generate_ground_truth(prof)
    np.testing.assert_allclose(gt.accel, np.tile([0, 0, 9.81], (len(gt.t), 1)), atol=1e-12)
    assert np.abs(gt.p).max() < 1e-12 and np.abs(gt.v).max() < 1e-12
    np.testing.assert_allclose(gt.R, np.tile(np.eye(3), (len(gt.t), 1, 1)), atol=1e-15)


def test_reintegration_self_consistent(gt30):
    X = integrate_inputs(gt30.X[0], gt30.omega, gt30.accel, 0.01, 10)
    assert np.linalg.norm(X[-1, :3, 4] - gt30.p[-1]) < 1e-6


def test_ground_truth_deterministic():
    a = generate_ground_truth(TrajectoryProfile(duration=1.0, seed=3))
    b = generate_ground_truth(TrajectoryProfile(duration=1.0, seed=3))
    assert a.X.tobytes() == b.X.tobytes()
    c = generate_ground_truth(TrajectoryProfile(duration=1.0, seed=4))
    assert not np.array_equal(a.X, c.X)


# ------------------------------------------------------------------ sensors

def test_noiseless_observations_are_exact(gt_short):
    log = synthesize_sensors(gt_short, noise=None)
    assert log.mode == "landmark"
    layout = landmark_layout()
    for k in (0, 50, 200):
        X = gt_short.X[k]
        for i, m in enumerate(LANDMARKS):
            b = np.r_[m, 0.0, 1.0]
            np.testing.assert_allclose(log.obs[k, i], measurement_map(X, b), atol=1e-14)
    np.testing.assert_array_equal(log.omega, gt_short.omega)
    assert layout.dim == 9


def test_landmarks_and_defaults():
    np.testing.assert_array_equal(LANDMARKS, [[0, 2, 2], [-2, -2, -2], [2, -2, -2]])
    cfg = NoiseConfig()
    assert (cfg.sigma_accel, cfg.sigma_gyro) == (0.2568, 0.00139)


def test_imu_noise_statistics(gt30):
    cfg = NoiseConfig()
    log = synthesize_sensors(gt30, noise=cfg, seed=7)
    sw = (log.omega - gt30.omega).std(axis=0)
    sa = (log.accel - gt30.accel).std(axis=0)
    assert np.all(np.abs(sw / cfg.sigma_gyro - 1) < 0.05)
    assert np.all(np.abs(sa / cfg.sigma_accel - 1) < 0.05)
    sc = (log.obs - synthesize_sensors(gt30, noise=None).obs).std(axis=(0, 1))
    assert np.all(np.abs(sc / 0.1 - 1) < 0.05)


def test_sensor_seeds(gt_short):
    a = synthesize_sensors(gt_short, seed=1)
    b = synthesize_sensors(gt_short, seed=1)
    c = synthesize_sensors(gt_short, seed=2)
    assert a.checksum() == b.checksum() != c.checksum()


def test_empty_ground_truth_rejected(gt_short):
    from dataclasses import replace
    empty = replace(gt_short, t=gt_short.t[:0], X=gt_short.X[:0])
    with pytest.raises(ValueError):
        synthesize_sensors(empty)


# ------------------------------------------------------------------ legged

def test_contact_schedule_trot():
    t = np.arange(0, 2.0, 0.01)
    c = contact_schedule(t, 0.5)
    np.testing.assert_array_equal(c[:, 0], c[:, 3])
    np.testing.assert_array_equal(c[:, 1], c[:, 2])
    assert not np.any(c[:, 0] & c[:, 1])
    assert abs(c[:, 0].sum() - len(t) / 2) <= 1
    assert c[0].tolist() == [True, False, False, True]
    assert c[25].tolist() == [False, True, True, False]


def test_ik_roundtrip_reachable(rng):
    geom = quadruped_legs()["FL"]
    for _ in range(50):
        phi = np.array([rng.uniform(-0.3, 0.3), rng.uniform(0.3, 1.2), rng.uniform(-2.0, -0.8)])
        r = forward_kinematics(phi, geom)
        sol, ok = solve_joint_angles(r, geom)
        assert ok
        assert np.linalg.norm(forward_kinematics(sol, geom) - r) < 1e-9


def test_ik_unreachable_fails():
    geom = quadruped_legs()["FL"]
    _, ok = solve_joint_angles([3.0, 0.0, -3.0], geom)
    assert not ok


def test_legged_stationary_residual_zero():
    prof = TrajectoryProfile(duration=1.0, gyro_amp=(0, 0, 0), accel_amp=(0, 0, 0))
    gt = generate_ground_truth(prof)
    log = synthesize_legged(gt, noise=None)
    assert log.mode == "legged" and log.ik_failures == 0
    layout = legged_layout(log.leg_names)
    legs = quadruped_legs()
    X = truth_state(gt.R[0], gt.v[0], gt.p[0], layout)
    for j, name in enumerate(log.leg_names):
        col = layout.contact_column(name)
        X[:3, 3 + col] = gt.p[0] + gt.R[0] @ forward_kinematics(log.joints[0, j], legs[name])
    for k in range(0, len(gt.t), 10):
        for j, name in enumerate(log.leg_names):
            if not log.contacts[k, j]:
                continue
            meas = make_leg_measurement(log.joints[k, j], NoiseConfig(), legs[name],
                                        layout.contact_column(name), layout)
            Xk = X.copy()
            Xk[:3, :3] = gt.R[k]
            Xk[:3, 4] = gt.p[k]
            r = meas.y_reduced - measurement_map(Xk, leg_b(layout, meas.contact_index))
            assert np.abs(r).max() < 1e-8


def test_legged_feet_fixed_during_stance():
    gt = generate_ground_truth(TrajectoryProfile(duration=1.0, gyro_amp=LEGGED_PROFILE.gyro_amp,
                                                 accel_amp=LEGGED_PROFILE.accel_amp))
    log = synthesize_legged(gt, noise=None)
    legs = quadruped_legs()
    j = 0
    idx = np.nonzero(log.contacts[:, j])[0][:20]
    feet = [gt.p[k] + gt.R[k] @ forward_kinematics(log.joints[k, j], legs["FL"]) for k in idx]
    assert np.ptp(np.array(feet), axis=0).max() < 1e-9


def test_legged_rejects_bad_period(gt_short):
    with pytest.raises(ValueError):
        synthesize_legged(gt_short, gait_period=0.0)


# ------------------------------------------------------------------ trials

def _filters(gt, layout, names=("nano", "inekf"), P0=None):
    X0 = truth_state(gt.R[0], gt.v[0], gt.p[0], layout)
    return {n: make_filter(n, X0, layout, NoiseConfig(), P0=P0) for n in names}


def test_run_trial_identical_inputs_and_counts(gt_short):
    log = synthesize_sensors(gt_short, seed=0)
    res = run_trial(log, _filters(gt_short, landmark_layout()))
    assert res.inputs_checksum["nano"] == res.inputs_checksum["inekf"]
    n_meas = (len(log) - 1) * len(LANDMARKS)
    assert res.update_counts == {"nano": n_meas, "inekf": n_meas}
    assert len(res.step_times["nano"]) == n_meas
    assert res.estimates["nano"].p.shape == (len(log), 3)


def test_run_trial_noiseless_consistency(gt_short):
    log = synthesize_sensors(gt_short, noise=None, sigma_cam=1e-3)
    res = run_trial(log, _filters(gt_short, landmark_layout()))
    for est in res.estimates.values():
        assert np.linalg.norm(est.p - gt_short.p, axis=1).max() < 1e-4


def test_run_trial_legged_counts():
    gt = generate_ground_truth(TrajectoryProfile(duration=1.0, gyro_amp=LEGGED_PROFILE.gyro_amp,
                                                 accel_amp=LEGGED_PROFILE.accel_amp))
    log = synthesize_legged(gt, seed=0)
    res = run_trial(log, _filters(gt, legged_layout(log.leg_names)))
    # one update per stance sample except the touchdown sample of each stance phase
    c = log.contacts
    rising = c & ~np.vstack([np.zeros((1, c.shape[1]), bool), c[:-1]])
    assert res.update_counts["nano"] == int(c.sum() - rising.sum())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_trial_wraps_failures(gt_short):
    log = synthesize_sensors(gt_short, seed=0)
    log.omega[5] = np.nan
    with pytest.raises(FilterFailure) as err:
        run_trial(log, _filters(gt_short, landmark_layout(), names=("nano",)))
    assert err.value.filter_name == "nano" and err.value.step == 6


def test_make_filter_unknown():
    with pytest.raises(ValueError):
        make_filter("ukf", np.eye(5), landmark_layout(), NoiseConfig())


def test_initial_covariance():
    P = initial_covariance(legged_layout())
    np.testing.assert_array_equal(np.diag(P), [1e-4] * 3 + [1e-2] * 9)


# ------------------------------------------------------------------ Monte Carlo

SPEC = CampaignSpec(profile=SHORT)


def test_monte_carlo_single_matches_run_trial(gt_short):
    s = run_monte_carlo(1, SPEC, base_seed=5)
    log = synthesize_sensors(gt_short, seed=5)
    res = run_log(SPEC, log, (gt_short.R[0], gt_short.v[0], gt_short.p[0]))
    for name in ("nano", "inekf"):
        e = np.linalg.norm(res.estimates[name].p - gt_short.p, axis=1)
        np.testing.assert_array_equal(s.errors[name]["pos"][0], e)
        np.testing.assert_array_equal(s.rmse_curve[name]["pos"], e)


def test_monte_carlo_deterministic_and_parallel():
    a = run_monte_carlo(3, SPEC, base_seed=1)
    b = run_monte_carlo(3, SPEC, base_seed=1, threads=2)
    for name in SPEC.filters:
        for ch in ("pos", "vel", "ori"):
            assert a.errors[name][ch].tobytes() == b.errors[name][ch].tobytes()
    assert a.trials == [0, 1, 2] and not a.failed


def test_monte_carlo_permutation_invariant():
    s = run_monte_carlo(3, SPEC, base_seed=1)
    e = s.errors["nano"]["pos"]
    np.testing.assert_allclose(np.sqrt(np.mean(e[::-1] ** 2, axis=0)), s.rmse_curve["nano"]["pos"],
                               rtol=1e-15)


def test_monte_carlo_records_failures():
    # a profile whose duration is shorter than the RE window still succeeds with re=None
    spec = CampaignSpec(profile=TrajectoryProfile(duration=1.0), re_window=3.0)
    s = run_monte_carlo(2, spec)
    assert s.reports["nano"][0]["re"] is None
    assert s.mean_rmse("nano", "pos") > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_monte_carlo_failed_trial_excluded(monkeypatch):
    import nanol.sim as sim

    real = sim.simulate_log

    def broken(spec, gt, seed):
        log = real(spec, gt, seed)
        if seed == 1:
            log.accel[3] = np.inf
        return log

    monkeypatch.setattr(sim, "simulate_log", broken)
    s = run_monte_carlo(3, SPEC)
    assert s.trials == [0, 2]
    assert s.failed[0]["trial"] == 1
    assert s.errors["nano"]["pos"].shape[0] == 2


def test_monte_carlo_rejects_zero_trials():
    with pytest.raises(ValueError):
        run_monte_carlo(0, SPEC)


def test_campaign_spec_validation():
    with pytest.raises(ValueError):
        CampaignSpec(mode="wheel")
    with pytest.raises(ValueError):
        CampaignSpec(filters=())
    assert CampaignSpec().nano == NanoConfig()
