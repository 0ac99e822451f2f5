"""Top-level acceptance checks for the estimator family.

Each test prints a single [PASS]/[FAIL] line with the measured numbers
(visible under `pytest -s`) and then asserts. Budgets are wall-clock.
"""

import math
import time

import numpy as np

from kfvfgo import sim
from kfvfgo.bench import default_init, monte_carlo, parse_estimator, run_spec
from kfvfgo.core import (
    GaussianBelief,
    LinearMeasurementModel,
    MeasurementModel,
    ProcessModel,
    RobustKernel,
    StateVector,
    spd_inverse,
)
from kfvfgo.fgo import (
    FactorGraph,
    MeasurementFactor,
    PriorFactor,
    PropagationFactor,
    SolverOptions,
    gauss_newton_solve,
    marginalize_oldest,
)
from kfvfgo.kfv import KfvVariant, kf_update, update_for

SCHEMES = ("L+G", "NL+G", "L+NG", "NL+NG")
PAIRS = (("ekf", "fg-ekf"), ("rekf", "fg-rekf"),
         ("iekf", "fg-iekf"), ("riekf", "fg-riekf"))

_datasets = {}


def _check(num, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def _dataset(scheme, seed, epochs=100):
    key = (scheme, seed, epochs)
    if key not in _datasets:
        _datasets[key] = sim.generate_dataset(
            sim.named_scheme(scheme, epochs=epochs), seed)
    return _datasets[key]


def _spec(name):
    # tighten the iteration tolerance so iterated pairs stop identically
    tol = 1e-13 if "iekf" in name else None
    return parse_estimator(name, iter_tol=tol)


def _random_single_epoch_problem(rng):
    anchors = sim.place_anchors(105.0, 4)
    model = MeasurementModel(anchors, 0.01 * np.eye(4))
    mean = np.concatenate([rng.uniform(-80.0, 80.0, 2), rng.uniform(-5.0, 5.0, 2)])
    a = rng.standard_normal((4, 4))
    belief = GaussianBelief(StateVector.from_array(mean), a @ a.T + 4.0 * np.eye(4))
    z = model.predict(mean + rng.standard_normal(4)) + 0.1 * rng.standard_normal(4)
    if rng.uniform() < 0.5:
        z[rng.integers(0, 4)] += 30.0
    return belief, model, z


def test_criterion_01_filter_and_graph_routes_coincide():
    t0 = time.perf_counter()
    worst_mean = worst_max = 0.0
    for kfv_name, fg_name in PAIRS:
        for scheme in SCHEMES:
            for seed in range(1, 6):
                ds = _dataset(scheme, seed)
                a = run_spec(_spec(kfv_name), ds)
                b = run_spec(_spec(fg_name), ds)
                diff = np.linalg.norm(a.estimates_array() - b.estimates_array(),
                                      axis=1)
                worst_mean = max(worst_mean, float(np.mean(diff)))
                worst_max = max(worst_max, float(np.max(diff)))
    elapsed = time.perf_counter() - t0
    ok = worst_mean <= 1e-9 and worst_max <= 1e-8 and elapsed < 30.0
    _check(1, ok, "4 pairs x 4 schemes x 5 seeds: "
           f"worst mean diff {worst_mean:.3e} m, worst epoch diff {worst_max:.3e} m, "
           f"{elapsed:.1f} s")


def test_criterion_02_autodiff_jacobians_are_interchangeable():
    t0 = time.perf_counter()
    worst_mean = 0.0
    for base in ("fg-ekf", "fg-rekf", "fg-iekf", "fg-riekf"):
        for scheme in SCHEMES:
            for seed in range(1, 6):
                ds = _dataset(scheme, seed)
                a = run_spec(_spec(base), ds)
                b = run_spec(_spec(base + "-ad"), ds)
                diff = np.linalg.norm(a.estimates_array() - b.estimates_array(),
                                      axis=1)
                worst_mean = max(worst_mean, float(np.mean(diff)))

    model = MeasurementModel(sim.place_anchors(105.0, 4), 0.01 * np.eye(4))
    rng = np.random.default_rng(2)
    worst_entry = 0.0
    for _ in range(1000):
        state = np.concatenate([rng.uniform(-300.0, 300.0, 2),
                                rng.uniform(-10.0, 10.0, 2)])
        gap = np.max(np.abs(model.jacobian(state) - model.jacobian_autodiff(state)))
        worst_entry = max(worst_entry, float(gap))
    elapsed = time.perf_counter() - t0
    ok = worst_mean <= 1e-12 and worst_entry <= 1e-13 and elapsed < 30.0
    _check(2, ok, f"analytic vs dual-number runs: worst mean diff {worst_mean:.3e} m; "
           f"jacobian worst entry {worst_entry:.3e} over 1000 states; {elapsed:.1f} s")


def test_criterion_03_degeneration_lattice():
    t0 = time.perf_counter()
    huber = RobustKernel.huber()
    lattice = (
        (KfvVariant("iekf", max_iters=1), KfvVariant("ekf")),
        (KfvVariant("riekf", max_iters=1, kernel=huber),
         KfvVariant("rekf", kernel=huber)),
        (KfvVariant("rekf", kernel=RobustKernel.l2()), KfvVariant("ekf")),
        (KfvVariant("riekf", kernel=RobustKernel.l2()), KfvVariant("iekf")),
    )
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        belief, model, z = _random_single_epoch_problem(rng)
        for left, right in lattice:
            a, _ = update_for(left)(belief, model, z)
            b, _ = update_for(right)(belief, model, z)
            worst = max(worst,
                        float(np.max(np.abs(a.mean_array() - b.mean_array()))),
                        float(np.max(np.abs(a.covariance - b.covariance))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5.0
    _check(3, ok, f"4 identities x 100 problems: worst deviation {worst:.3e}; "
           f"{elapsed:.2f} s")


def test_criterion_04_marginalization_equals_covariance_propagation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        a = rng.standard_normal((4, 4))
        p_hat = a @ a.T + 0.5 * np.eye(4)
        f = rng.standard_normal((4, 4)) + 2.0 * np.eye(4)
        b = rng.standard_normal((4, 4))
        q = b @ b.T + 0.1 * np.eye(4)
        x_hat = rng.standard_normal(4)
        graph = FactorGraph()
        graph.add_variable(x_hat)
        graph.add_variable(f @ x_hat)
        graph.factors.append(PriorFactor(0, x_hat, spd_inverse(p_hat, "prior")))
        graph.factors.append(PropagationFactor(0, 1, ProcessModel(f, q, 1.0)))
        marg = marginalize_oldest(graph, [x_hat, f @ x_hat])
        predicted = f @ p_hat @ f.T + q
        recovered = spd_inverse(marg.information, "marginal information")
        worst = max(worst, float(np.linalg.norm(recovered - predicted)
                                 / np.linalg.norm(predicted)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 1.0
    _check(4, ok, f"100 random SPD instances: worst relative gap {worst:.3e}; "
           f"{elapsed:.2f} s")


def test_criterion_05_linear_gaussian_single_step_is_optimal():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_state = worst_info = 0.0
    for _ in range(20):
        h = rng.standard_normal((4, 4))
        r = rng.standard_normal((4, 4))
        model = LinearMeasurementModel(h, r @ r.T + 0.5 * np.eye(4))
        a = rng.standard_normal((4, 4))
        cov = a @ a.T + np.eye(4)
        mean = rng.standard_normal(4)
        z = h @ mean + rng.standard_normal(4)
        belief = GaussianBelief(StateVector.from_array(mean), cov)
        post, _ = kf_update(belief, model, z)

        graph = FactorGraph()
        graph.add_variable(mean)
        graph.factors.append(PriorFactor(0, mean, spd_inverse(cov, "prior")))
        graph.factors.append(MeasurementFactor(0, model, z))
        result = gauss_newton_solve(graph, [mean], SolverOptions(max_iters=1))
        recovered = spd_inverse(result.information, "posterior information")
        worst_state = max(worst_state,
                          float(np.max(np.abs(result.estimates[0] - post.mean_array()))),
                          float(np.max(np.abs(recovered - post.covariance))))
        worst_info = max(worst_info,
                         float(np.linalg.norm(recovered - post.covariance)
                               / np.linalg.norm(post.covariance)))
    elapsed = time.perf_counter() - t0
    ok = worst_state <= 1e-10 and worst_info <= 1e-8 and elapsed < 1.0
    _check(5, ok, f"20 linear-gaussian problems: worst mean/cov gap {worst_state:.3e}, "
           f"worst information gap {worst_info:.3e} rel; {elapsed:.2f} s")


def test_criterion_06_window_size_ordering():
    t0 = time.perf_counter()
    specs = [parse_estimator("fg-ekf")] + [
        parse_estimator("sw-fgo", window=w) for w in (1, 2, 3, 4)]
    out = monte_carlo(specs, "NL+NG", n_runs=20, base_seed=1, epochs=100)
    score = {key: float(np.mean(entry["per_seed_rmse"]))
             for key, entry in out["estimators"].items()}
    elapsed = time.perf_counter() - t0
    ok = (score["sw-fgo-w3"] <= 1.05 * score["sw-fgo-w2"]
          and score["sw-fgo-w4"] <= 1.05 * score["sw-fgo-w3"]
          and score["sw-fgo-w1"] > score["fg-ekf"]
          and elapsed < 300.0)
    _check(6, ok, "NL+NG 20 seeds: rmse w1..w4 = "
           + ", ".join(f"{score[f'sw-fgo-w{w}']:.2f}" for w in (1, 2, 3, 4))
           + f" m vs fg-ekf {score['fg-ekf']:.2f} m; {elapsed:.1f} s")


def test_criterion_07_robust_iterated_variant_wins_under_heavy_tails():
    t0 = time.perf_counter()
    details = []
    ok = True
    for scheme in ("L+NG", "NL+NG"):
        out = monte_carlo([parse_estimator(n) for n in ("ekf", "iekf", "riekf")],
                          scheme, n_runs=20, base_seed=1, epochs=100)
        score = {key: float(np.mean(entry["per_seed_rmse"]))
                 for key, entry in out["estimators"].items()}
        ok = ok and score["riekf"] <= score["iekf"] and score["riekf"] <= score["ekf"]
        details.append(f"{scheme}: riekf {score['riekf']:.2f} <= "
                       f"iekf {score['iekf']:.2f}, ekf {score['ekf']:.2f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 180.0
    _check(7, ok, "; ".join(details) + f"; {elapsed:.1f} s")


def test_criterion_08_runtime_ordering():
    t0 = time.perf_counter()
    specs = [parse_estimator("ekf"), parse_estimator("fg-ekf"),
             parse_estimator("fg-ekf-ad")] + [
        parse_estimator("sw-fgo", window=w) for w in (1, 2, 4, 8)]
    out = monte_carlo(specs, "NL+NG", n_runs=100, base_seed=1, epochs=100,
                      timing=True)
    med = {key: float(np.median(entry["runtime_samples_ms"]))
           for key, entry in out["estimators"].items()}
    elapsed = time.perf_counter() - t0
    ladder = [med[f"sw-fgo-w{w}"] for w in (1, 2, 4, 8)]
    ok = (med["ekf"] < med["fg-ekf"] < med["fg-ekf-ad"]
          and all(x < y for x, y in zip(ladder, ladder[1:]))
          and elapsed < 300.0)
    _check(8, ok, "median per-epoch ms: "
           f"ekf {med['ekf']:.4f} < fg-ekf {med['fg-ekf']:.4f} < "
           f"fg-ekf-ad {med['fg-ekf-ad']:.4f}; sw-fgo "
           + " < ".join(f"{m:.4f}" for m in ladder) + f"; {elapsed:.0f} s")


def test_criterion_09_iterates_descend_from_poor_prior():
    t0 = time.perf_counter()
    counts = {"iekf": 0, "riekf": 0}
    for seed in range(1, 21):
        ds = _dataset("NL+G", seed, epochs=1)
        for name in counts:
            report = run_spec(parse_estimator(name), ds, init=default_init(ds))
            trace = report.records[0].trace
            if trace.final_norm <= trace.first_norm + 1e-12:
                counts[name] += 1
    elapsed = time.perf_counter() - t0
    ok = all(v >= 19 for v in counts.values()) and elapsed < 30.0
    _check(9, ok, f"descent in {counts['iekf']}/20 iekf and "
           f"{counts['riekf']}/20 riekf first epochs; {elapsed:.2f} s")


def test_criterion_10_simulator_fidelity():
    gmm = sim.GmmNoise((0.8, 0.2), (0.1, 10.0))
    rng = sim.SeededRng(123)
    draws = sim.sample_noise_batch(gmm, rng, 10 ** 6)
    target = math.sqrt(20.008)
    std_gap = abs(float(np.std(draws)) - target)

    path = np.array([s.as_array() for s in
                     sim.ucm_trajectory((200.0, -100.0), (5.0, 5.0), 0.05, 10_000)])
    speed = math.hypot(5.0, 5.0)
    radius = speed / 0.05
    center = path[0, :2] + radius * np.array([-5.0, 5.0]) / speed
    radius_gap = float(np.max(np.abs(
        np.linalg.norm(path[:, :2] - center, axis=1) - radius)))
    speed_gap = float(np.max(np.abs(np.linalg.norm(path[:, 2:], axis=1) - speed)))

    scheme = sim.named_scheme("NL+NG", epochs=50)
    hashes = {sim.dataset_hash(sim.generate_dataset(scheme, 11)) for _ in range(2)}

    ok = (std_gap <= 0.01 * target and radius_gap < 1e-9 and speed_gap < 1e-9
          and len(hashes) == 1)
    _check(10, ok, f"gmm std within {std_gap:.4f} of {target:.4f}; ucm radius/speed "
           f"drift {radius_gap:.2e}/{speed_gap:.2e}; dataset hash stable")
