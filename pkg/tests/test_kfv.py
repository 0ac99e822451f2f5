"""Recursive filter family: predict/update algebra and the variant lattice."""

import dataclasses
import math

import numpy as np
import pytest

from kfvfgo import defaults, sim
from kfvfgo.core import (
    DomainError,
    EstimationError,
    GaussianBelief,
    LinearMeasurementModel,
    MeasurementModel,
    ProcessModel,
    RobustKernel,
    StateVector,
    residual_weights,
    whiten_with,
)
from kfvfgo.kfv import (
    KfvVariant,
    ekf_update,
    iekf_update,
    kf_predict,
    kf_update,
    rekf_update,
    riekf_update,
    run_filter,
    update_for,
)

ANCHORS = sim.place_anchors(105.0, 4)
TOA = MeasurementModel(ANCHORS, 0.01 * np.eye(4))


def belief_at(x, cov):
    return GaussianBelief(StateVector.from_array(x), np.asarray(cov, dtype=float))


def turn_process(omega, dt, q=1e-9):
    """Transition matched to the circular truth (rotation + its integral)."""
    th = omega * dt
    s, c = math.sin(th), math.cos(th)
    a, b = s / omega, (1.0 - c) / omega
    f = np.array([
        [1.0, 0.0, a, -b],
        [0.0, 1.0, b, a],
        [0.0, 0.0, c, -s],
        [0.0, 0.0, s, c],
    ])
    return ProcessModel(f, q * np.eye(4), dt)


def rmse(report, dataset, start=0):
    err = np.linalg.norm(report.positions() - dataset.truth_positions(), axis=1)
    return float(np.sqrt(np.mean(err[start:] ** 2)))


def random_single_epoch_problem(rng):
    mean = np.concatenate([rng.uniform(-80.0, 80.0, 2), rng.uniform(-5.0, 5.0, 2)])
    a = rng.standard_normal((4, 4))
    belief = belief_at(mean, a @ a.T + 4.0 * np.eye(4))
    z = TOA.predict(mean + rng.standard_normal(4)) + 0.1 * rng.standard_normal(4)
    if rng.uniform() < 0.5:
        z[rng.integers(0, 4)] += 30.0  # occasional heavy outlier
    return belief, z


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def test_predict_constant_velocity_mean():
    process = ProcessModel.constant_velocity(1.0, 1e-4 * np.ones(4))
    belief = belief_at([0.0, 0.0, 1.0, 1.0], np.eye(4))
    out = kf_predict(belief, process)
    assert np.array_equal(out.mean_array(), [1.0, 1.0, 1.0, 1.0])


def test_predict_covariance_diagonal_case():
    # F=2I, P=I, Q=3I gives F P F^T + Q = 7I
    process = ProcessModel(2.0 * np.eye(4), 3.0 * np.eye(4), 1.0)
    out = kf_predict(belief_at(np.zeros(4), np.eye(4)), process)
    assert np.array_equal(out.covariance, 7.0 * np.eye(4))


def test_predict_keeps_covariance_spd():
    rng = np.random.default_rng(31)
    for _ in range(20):
        f = rng.standard_normal((4, 4))
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        belief = belief_at(rng.standard_normal(4), a @ a.T + np.eye(4))
        process = ProcessModel(f, b @ b.T + 0.1 * np.eye(4), 1.0)
        out = kf_predict(belief, process)
        assert np.array_equal(out.covariance, out.covariance.T)
        np.linalg.cholesky(out.covariance)


# ---------------------------------------------------------------------------
# update core
# ---------------------------------------------------------------------------


def test_linear_update_textbook_values():
    # H=I, R=I, P=I, x=0, z=2: K=1/2, posterior mean 1, covariance 1/2
    model = LinearMeasurementModel(np.eye(4), np.eye(4))
    belief = belief_at(np.zeros(4), np.eye(4))
    post, trace = kf_update(belief, model, 2.0 * np.ones(4))
    assert np.allclose(post.mean_array(), np.ones(4), atol=1e-15)
    assert np.allclose(post.covariance, 0.5 * np.eye(4), atol=1e-15)
    assert len(trace) == 1


def test_zero_innovation_is_a_fixed_point():
    belief = belief_at([10.0, 20.0, 1.0, -1.0], np.diag([4.0, 4.0, 1.0, 1.0]))
    z = TOA.predict(belief.mean_array())
    for update in (ekf_update, lambda b, m, zz: iekf_update(b, m, zz, max_iters=8),
                   rekf_update, riekf_update):
        post, _ = update(belief, TOA, z)
        assert np.array_equal(post.mean_array(), belief.mean_array())


def test_uninformative_measurement_keeps_prior():
    loose = MeasurementModel(ANCHORS, 1e12 * np.eye(4))
    belief = belief_at([10.0, 20.0, 1.0, -1.0], np.eye(4))
    z = loose.predict(belief.mean_array()) + 50.0
    post, _ = ekf_update(belief, loose, z)
    assert np.linalg.norm(post.mean_array() - belief.mean_array()) < 1e-9
    assert np.max(np.abs(post.covariance - belief.covariance)) < 1e-9


def test_update_rejects_nonfinite_measurement():
    belief = belief_at([10.0, 20.0, 0.0, 0.0], np.eye(4))
    with pytest.raises(DomainError):
        ekf_update(belief, TOA, np.array([1.0, 2.0, np.inf, 3.0]))


def test_kf_equals_ekf_on_linear_model():
    rng = np.random.default_rng(32)
    model = LinearMeasurementModel(rng.standard_normal((3, 4)), np.eye(3))
    belief = belief_at(rng.standard_normal(4), np.eye(4) * 2.0)
    z = rng.standard_normal(3)
    kf_post, _ = update_for(KfvVariant("kf"))(belief, model, z)
    ekf_post, _ = update_for(KfvVariant("ekf"))(belief, model, z)
    assert np.array_equal(kf_post.mean_array(), ekf_post.mean_array())
    assert np.array_equal(kf_post.covariance, ekf_post.covariance)


def test_iterated_update_on_linear_model_stops_after_one_step():
    """The second pass reproduces the first iterate exactly, so it stops."""
    rng = np.random.default_rng(33)
    model = LinearMeasurementModel(rng.standard_normal((4, 4)), np.eye(4))
    belief = belief_at(rng.standard_normal(4), 3.0 * np.eye(4))
    z = rng.standard_normal(4)
    post, trace = iekf_update(belief, model, z, max_iters=10)
    single, _ = ekf_update(belief, model, z)
    assert len(trace) == 2  # step, then a correction of rounding size
    assert np.allclose(trace.entries[0][0], trace.entries[1][0], rtol=0, atol=1e-10)
    assert np.allclose(post.mean_array(), single.mean_array(), rtol=0, atol=1e-10)


def test_iekf_relinearization_changes_nonlinear_answer():
    belief = belief_at([60.0, -40.0, 0.0, 0.0], np.diag([400.0, 400.0, 4.0, 4.0]))
    z = TOA.predict(np.array([10.0, 20.0, 0.0, 0.0]))
    one, _ = ekf_update(belief, TOA, z)
    many, trace = iekf_update(belief, TOA, z, max_iters=20, tol=1e-12)
    assert len(trace) > 1
    assert not np.array_equal(one.mean_array(), many.mean_array())
    truth = np.array([10.0, 20.0])
    assert np.linalg.norm(many.mean_array()[:2] - truth) < np.linalg.norm(
        one.mean_array()[:2] - truth)


def test_rekf_downweights_the_outlier_entry():
    truth = np.array([10.0, 20.0, 1.0, 1.0])
    belief = belief_at(truth, np.diag([100.0, 100.0, 10.0, 10.0]))
    z = TOA.predict(truth)
    z[2] += 30.0
    whitened = whiten_with(TOA.chol_r, z - TOA.predict(belief.mean_array()))
    weights = residual_weights(RobustKernel.huber(), whitened)
    assert weights[2] < 0.1
    assert all(w == 1.0 for w in np.delete(weights, 2))

    robust, _ = rekf_update(belief, TOA, z)
    plain, _ = ekf_update(belief, TOA, z)
    err_robust = np.linalg.norm(robust.mean_array()[:2] - truth[:2])
    err_plain = np.linalg.norm(plain.mean_array()[:2] - truth[:2])
    assert err_robust < err_plain


def test_posterior_covariance_contracts_under_l2():
    rng = np.random.default_rng(34)
    for _ in range(10):
        belief, z = random_single_epoch_problem(rng)
        post, _ = ekf_update(belief, TOA, z)
        assert np.trace(post.covariance) <= np.trace(belief.covariance) + 1e-12
        np.linalg.cholesky(post.covariance)


# ---------------------------------------------------------------------------
# the variant lattice: robust/iterated corners degenerate exactly
# ---------------------------------------------------------------------------


def test_lattice_single_iteration_collapses_to_single_pass():
    rng = np.random.default_rng(35)
    iekf1 = update_for(KfvVariant("iekf", max_iters=1))
    ekf = update_for(KfvVariant("ekf"))
    riekf1 = update_for(KfvVariant("riekf", max_iters=1, kernel=RobustKernel.huber()))
    rekf = update_for(KfvVariant("rekf", kernel=RobustKernel.huber()))
    for _ in range(10):
        belief, z = random_single_epoch_problem(rng)
        a, _ = iekf1(belief, TOA, z)
        b, _ = ekf(belief, TOA, z)
        assert np.array_equal(a.mean_array(), b.mean_array())
        assert np.array_equal(a.covariance, b.covariance)
        c, _ = riekf1(belief, TOA, z)
        d, _ = rekf(belief, TOA, z)
        assert np.array_equal(c.mean_array(), d.mean_array())
        assert np.array_equal(c.covariance, d.covariance)


def test_lattice_l2_kernel_collapses_to_non_robust():
    rng = np.random.default_rng(36)
    rekf_l2 = update_for(KfvVariant("rekf", kernel=RobustKernel.l2()))
    ekf = update_for(KfvVariant("ekf"))
    riekf_l2 = update_for(KfvVariant("riekf", max_iters=7, kernel=RobustKernel.l2()))
    iekf = update_for(KfvVariant("iekf", max_iters=7))
    for _ in range(10):
        belief, z = random_single_epoch_problem(rng)
        a, _ = rekf_l2(belief, TOA, z)
        b, _ = ekf(belief, TOA, z)
        assert np.array_equal(a.mean_array(), b.mean_array())
        assert np.array_equal(a.covariance, b.covariance)
        c, _ = riekf_l2(belief, TOA, z)
        d, _ = iekf(belief, TOA, z)
        assert np.array_equal(c.mean_array(), d.mean_array())
        assert np.array_equal(c.covariance, d.covariance)


def test_variant_validation():
    with pytest.raises(ValueError):
        KfvVariant("ukf")
    with pytest.raises(ValueError):
        KfvVariant("ekf", max_iters=3)  # single-pass
    with pytest.raises(ValueError):
        KfvVariant("ekf", kernel=RobustKernel.huber())  # L2-only
    with pytest.raises(ValueError):
        KfvVariant("iekf", max_iters=0)
    with pytest.raises(ValueError):
        KfvVariant("iekf", iter_tol=0.0)
    assert KfvVariant.rekf().kernel.kind == "huber"
    assert KfvVariant.riekf().max_iters == defaults.MAX_ITERS


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def test_run_filter_report_shape_and_traces():
    dataset = sim.generate_dataset(sim.named_scheme("NL+G", epochs=30), 2)
    init = belief_at(dataset.init_state.as_array(), np.diag(defaults.P0_DIAG))
    report = run_filter(KfvVariant.ekf(), dataset, init)
    assert report.epochs == 30
    assert report.estimator == "ekf"
    assert report.scheme_name == "NL+G"
    assert report.seed == 2
    assert set(report.config) == {"max_iters", "iter_tol", "kernel", "delta"}
    for rec in report.records:
        assert len(rec.trace) == 1  # single-pass: exactly one iterate
        assert rec.runtime_s >= 0.0
        np.linalg.cholesky(rec.covariance)
    iterated = run_filter(KfvVariant.iekf(max_iters=6), dataset, init)
    assert all(1 <= len(rec.trace) <= 6 for rec in iterated.records)


def test_run_filter_robust_wins_under_heavy_tails():
    dataset = sim.generate_dataset(sim.named_scheme("L+NG"), 42)
    init = belief_at(dataset.init_state.as_array(), np.diag(defaults.P0_DIAG))
    riekf = run_filter(KfvVariant.riekf(), dataset, init)
    iekf = run_filter(KfvVariant.iekf(), dataset, init)
    assert rmse(riekf, dataset) <= rmse(iekf, dataset)


def test_run_filter_gaussian_case_variant_ordering():
    """Benign noise: the non-robust variants agree; iteration rescues huber.

    The stiff default Q leaves a model-mismatch lag, so single-pass huber
    weighting (computed before the state moves) underrates every range and
    drifts; the iterated robust variant re-weights after each correction and
    ends at least as tight as iekf.
    """
    dataset = sim.generate_dataset(sim.named_scheme("L+G"), 42)
    init = belief_at(dataset.init_state.as_array(), np.diag(defaults.P0_DIAG))
    scores = {}
    for variant in (KfvVariant("kf"), KfvVariant.ekf(), KfvVariant.iekf(),
                    KfvVariant.rekf(), KfvVariant.riekf()):
        scores[variant.kind] = rmse(run_filter(variant, dataset, init), dataset, start=50)
    trio = [scores["kf"], scores["ekf"], scores["iekf"]]
    assert scores["kf"] == scores["ekf"]  # same linearized arithmetic
    assert max(trio) <= 1.01 * min(trio)
    assert scores["riekf"] <= scores["iekf"]


def test_run_filter_tracks_noiseless_data_with_matched_motion():
    scheme = sim.DataScheme("quiet", 105.0, sim.GaussianNoise(0.0), 4, 80, 1.0)
    dataset = sim.generate_dataset(scheme, 1)
    init = belief_at(dataset.init_state.as_array(), np.diag([1.0, 1.0, 0.1, 0.1]))
    report = run_filter(KfvVariant.iekf(), dataset, init,
                        process=turn_process(defaults.OMEGA, scheme.dt),
                        meas=sim.default_measurement_model(dataset, r_std=0.1))
    err = np.linalg.norm(report.positions() - dataset.truth_positions(), axis=1)
    assert np.max(err) < 1e-6


def test_run_filter_tags_failing_epoch():
    dataset = sim.generate_dataset(sim.named_scheme("NL+G", epochs=5), 3)
    ranges = dataset.ranges.copy()
    ranges[2, 0] = np.inf
    broken = dataclasses.replace(dataset, ranges=ranges)
    init = belief_at(broken.init_state.as_array(), np.diag(defaults.P0_DIAG))
    with pytest.raises(EstimationError, match="epoch 3"):
        run_filter(KfvVariant.ekf(), broken, init)
