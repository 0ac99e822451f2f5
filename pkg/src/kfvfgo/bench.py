"""Metrics, Monte-Carlo orchestration, and runtime comparisons.

Position errors are 2-norms in the plane, metrics are RMSE / MAE / CP95
(nearest-rank 95th percentile, no interpolation). Monte-Carlo runs sweep
seeds base_seed..base_seed+n-1 and pool per-epoch errors before summarizing,
so the numbers are reproducible bit-for-bit given the same spec; only the
runtime fields vary between machines. Runs parallelize across seeds with a
process pool unless timing mode asks for a quiet, strictly serial machine.
KFVFGO_THREADS caps the worker count.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fgo, kfv, sim
from .core import EstimationError, GaussianBelief, RobustKernel
from .defaults import HUBER_DELTA, ITER_TOL, MAX_ITERS, P0_DIAG
from .fgo import AD, ANALYTIC, SolverOptions
from .reports import RunReport

KFV_NAMES = ("kf", "ekf", "iekf", "rekf", "riekf")
SINGLE_PASS = ("kf", "ekf", "rekf")
ROBUST = ("rekf", "riekf")
DEFAULT_WINDOW = 4


class EstimatorSpecError(ValueError):
    """Estimator name/flag combination that contradicts itself."""


@dataclass(frozen=True)
class EstimatorSpec:
    """Fully resolved estimator choice; plain fields so it pickles to workers."""

    name: str            # display name, e.g. "riekf", "fg-iekf-ad", "sw-fgo"
    family: str          # "kfv" | "refgo" | "swfgo"
    base: str            # underlying variant: kf/ekf/iekf/rekf/riekf, or "sw"
    jacobian: str = ANALYTIC
    window: int | None = None
    max_iters: int = 1
    iter_tol: float = ITER_TOL
    kernel: str = "l2"
    delta: float = HUBER_DELTA

    @property
    def key(self) -> str:
        """Stable results key; windows disambiguate sliding-window entries."""
        if self.family == "swfgo":
            return f"{self.name}-w{self.window}"
        return self.name

    def robust_kernel(self) -> RobustKernel:
        if self.kernel == "huber":
            return RobustKernel.huber(self.delta)
        return RobustKernel.l2()

    def solver_options(self) -> SolverOptions:
        return SolverOptions(self.max_iters, self.iter_tol, self.robust_kernel())

    def variant(self) -> kfv.KfvVariant:
        return kfv.KfvVariant(self.base, self.max_iters, self.iter_tol,
                              self.robust_kernel())


def estimator_names() -> list:
    """Every accepted estimator name (for help text and error messages)."""
    names = list(KFV_NAMES)
    names += [f"fg-{b}" for b in KFV_NAMES] + [f"fg-{b}-ad" for b in KFV_NAMES]
    names += ["sw-fgo", "sw-fgo-ad"]
    return names


def parse_estimator(name: str, window=None, iters=None, kernel=None, delta=None,
                    jacobian=None, iter_tol=None) -> EstimatorSpec:
    """Resolve an estimator name plus option flags into an EstimatorSpec.

    Contradictions are rejected with an explanation rather than silently
    reinterpreted: --window only fits the sliding window, single-pass
    variants refuse --iters, L2-only variants refuse --kernel/--delta, and a
    -ad suffix cannot be combined with --jacobian analytic.
    """
    name = name.strip()
    tol = ITER_TOL if iter_tol is None else float(iter_tol)
    if delta is not None and delta <= 0.0:
        raise EstimatorSpecError("--delta must be positive")
    if iters is not None and iters < 1:
        raise EstimatorSpecError("--iters must be >= 1")
    if jacobian is not None and jacobian not in (ANALYTIC, AD):
        raise EstimatorSpecError(f"--jacobian must be '{ANALYTIC}' or '{AD}'")

    if name.startswith("sw-fgo"):
        suffix_ad = name == "sw-fgo-ad"
        if not (suffix_ad or name == "sw-fgo"):
            raise EstimatorSpecError(f"unknown estimator '{name}'")
        mode = _resolve_jacobian(name, suffix_ad, jacobian)
        w = DEFAULT_WINDOW if window is None else int(window)
        if w < 1:
            raise EstimatorSpecError("--window must be >= 1")
        kern = kernel or "l2"
        if kern not in ("l2", "huber"):
            raise EstimatorSpecError("--kernel must be 'l2' or 'huber'")
        if delta is not None and kern != "huber":
            raise EstimatorSpecError("--delta only applies with --kernel huber")
        # default is a single relinearization per epoch (warm-started windows
        # converge across epochs); pass --iters to iterate within an epoch
        return EstimatorSpec(name, "swfgo", "sw", mode, w,
                             iters or 1, tol, kern,
                             HUBER_DELTA if delta is None else float(delta))

    if window is not None:
        raise EstimatorSpecError("--window only applies to sw-fgo")

    if name.startswith("fg-"):
        family = "refgo"
        base = name[3:]
        suffix_ad = base.endswith("-ad")
        if suffix_ad:
            base = base[:-3]
        mode = _resolve_jacobian(name, suffix_ad, jacobian)
    else:
        family = "kfv"
        base = name
        if jacobian == AD:
            raise EstimatorSpecError(
                "AD Jacobians apply to factor-graph estimators (fg-*, sw-fgo)")
        mode = ANALYTIC
    if base not in KFV_NAMES:
        raise EstimatorSpecError(
            f"unknown estimator '{name}'; expected one of {', '.join(estimator_names())}")

    if base in SINGLE_PASS:
        if iters not in (None, 1):
            raise EstimatorSpecError(
                f"{name} is single-pass; use the iterated variant for --iters > 1")
        max_iters = 1
    else:
        max_iters = iters or MAX_ITERS

    if base in ROBUST:
        kern = kernel or "huber"
        if kern != "huber":
            raise EstimatorSpecError(
                f"{name} uses the huber kernel; pick the non-robust variant for l2")
    else:
        kern = kernel or "l2"
        if kern != "l2":
            raise EstimatorSpecError(
                f"{name} is a least-squares variant; use rekf/riekf for robust kernels")
        if delta is not None:
            raise EstimatorSpecError("--delta only applies to robust variants")
    return EstimatorSpec(name, family, base, mode, None, max_iters, tol, kern,
                         HUBER_DELTA if delta is None else float(delta))


def _resolve_jacobian(name, suffix_ad, flag):
    if suffix_ad:
        if flag == ANALYTIC:
            raise EstimatorSpecError(
                f"{name} requests AD Jacobians; drop the -ad suffix for analytic")
        return AD
    return flag or ANALYTIC


def default_init(dataset: sim.Dataset, p0_diag=None) -> GaussianBelief:
    """Initial belief: dataset's initial state with the default loose P0."""
    diag = P0_DIAG if p0_diag is None else tuple(p0_diag)
    return GaussianBelief(dataset.init_state, np.diag(np.asarray(diag, dtype=float)))


def run_spec(spec: EstimatorSpec, dataset: sim.Dataset, init=None,
             process=None, meas=None) -> RunReport:
    """Run one estimator spec over a dataset and return its RunReport."""
    if init is None:
        init = default_init(dataset)
    if spec.family == "kfv":
        return kfv.run_filter(spec.variant(), dataset, init, process, meas)
    if spec.family == "refgo":
        return fgo.run_refgo(dataset, init, spec.solver_options(), process, meas,
                             spec.jacobian, label=spec.name)
    return fgo.run_swfgo(dataset, init, spec.solver_options(), spec.window,
                         process, meas, spec.jacobian, label=spec.name)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSummary:
    rmse: float
    mae: float
    cp95: float
    mean_runtime: float
    runtime_quartiles: tuple  # (q1, median, q3) seconds

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "cp95": self.cp95,
                "mean_runtime_s": self.mean_runtime,
                "runtime_quartiles_s": list(self.runtime_quartiles)}


def position_errors(report: RunReport, dataset: sim.Dataset) -> np.ndarray:
    """Per-epoch planar position error ||p_hat - p_true|| in meters."""
    if report.epochs != dataset.epochs:
        raise ValueError(
            f"report has {report.epochs} epochs, dataset {dataset.epochs}")
    diff = report.positions() - dataset.truth_positions()
    return np.linalg.norm(diff, axis=1)


def metrics(errors, runtimes=()) -> MetricSummary:
    """RMSE / MAE / CP95 over scalar errors; CP95 is nearest-rank."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise ValueError("metrics need at least one error sample")
    rmse = float(np.sqrt(np.mean(e * e)))
    mae = float(np.mean(np.abs(e)))
    ranked = np.sort(np.abs(e))
    cp95 = float(ranked[math.ceil(0.95 * e.size) - 1])
    rt = np.asarray(runtimes, dtype=float).reshape(-1)
    if rt.size:
        mean_rt = float(np.mean(rt))
        quart = tuple(float(q) for q in np.percentile(rt, (25, 50, 75)))
    else:
        mean_rt, quart = 0.0, (0.0, 0.0, 0.0)
    return MetricSummary(rmse, mae, cp95, mean_rt, quart)


def summarize(report: RunReport, dataset: sim.Dataset) -> MetricSummary:
    return metrics(position_errors(report, dataset), report.runtimes())


def traj_difference(report_a: RunReport, report_b: RunReport, dataset: sim.Dataset):
    """(mean |e_A - e_B|, mean ||p_A - p_B||) between two runs on one dataset.

    The second statistic is the strict one: it compares the trajectories
    directly rather than their error magnitudes, so two estimators can only
    score ~0 by producing the same states.
    """
    if (report_a.scheme_name, report_a.seed) != (report_b.scheme_name, report_b.seed):
        raise ValueError("reports come from different datasets")
    e_a = position_errors(report_a, dataset)
    e_b = position_errors(report_b, dataset)
    state_diff = np.linalg.norm(report_a.positions() - report_b.positions(), axis=1)
    return float(np.mean(np.abs(e_a - e_b))), float(np.mean(state_diff))


# ---------------------------------------------------------------------------
# Monte-Carlo orchestration
# ---------------------------------------------------------------------------


def _seed_task(task):
    """Worker: run every estimator on one seed's dataset.

    Returns (seed, {estimator key: (errors, runtimes, first-epoch residual
    norms or None)}). Module-level so it pickles under ProcessPoolExecutor.
    """
    scheme_name, epochs, seed, specs, q_diag, r_std, p0_diag, want_trace = task
    scheme = sim.named_scheme(scheme_name, epochs=epochs)
    dataset = sim.generate_dataset(scheme, seed)
    process = None
    if q_diag is not None:
        process = sim.default_process_model(dataset, q_diag)
    meas = sim.default_measurement_model(dataset, r_std)
    init = default_init(dataset, p0_diag)
    out = {}
    for spec in specs:
        try:
            report = run_spec(spec, dataset, init, process, meas)
        except EstimationError as exc:
            raise EstimationError(f"seed {seed}, estimator {spec.key}: {exc}") from exc
        errors = position_errors(report, dataset)
        trace = report.records[0].trace.norms() if want_trace else None
        out[spec.key] = (errors, report.runtimes(), trace)
    return seed, out


def _worker_cap() -> int | None:
    raw = os.environ.get("KFVFGO_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"KFVFGO_THREADS must be an integer, got {raw!r}") from None
    return max(1, cap)


def monte_carlo(specs, scheme_name: str, n_runs: int, base_seed: int,
                epochs: int = 100, timing: bool = False,
                q_diag=None, r_std=None, p0_diag=None) -> dict:
    """Run every estimator over seeds base_seed..base_seed+n_runs-1.

    Returns the results-file structure: {"spec": ..., "estimators": {key:
    {"metrics", "runtime_samples_ms", "per_seed_rmse", "first_epoch_residuals"}}}.
    Metric numbers are deterministic for a given spec; runtime fields are not.
    Timing mode forces a serial run so samples are not polluted by siblings.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    specs = list(specs)
    keys = [spec.key for spec in specs]
    if len(set(keys)) != len(keys):
        raise ValueError(f"duplicate estimator entries: {keys}")
    q_tuple = None if q_diag is None else tuple(float(v) for v in q_diag)
    p0_tuple = None if p0_diag is None else tuple(float(v) for v in p0_diag)
    tasks = [(scheme_name, epochs, base_seed + i, tuple(specs), q_tuple, r_std,
              p0_tuple, base_seed + i == base_seed)
             for i in range(n_runs)]
    workers = min(n_runs, os.cpu_count() or 1, _worker_cap() or (os.cpu_count() or 1))
    if timing or workers <= 1:
        results = [_seed_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_seed_task, tasks))

    pooled_errors = {k: [] for k in keys}
    pooled_runtimes = {k: [] for k in keys}
    per_seed_rmse = {k: [] for k in keys}
    first_traces = {k: None for k in keys}
    for seed, per_est in results:
        for k in keys:
            errors, runtimes, trace = per_est[k]
            pooled_errors[k].append(np.asarray(errors))
            pooled_runtimes[k].append(np.asarray(runtimes))
            per_seed_rmse[k].append(float(np.sqrt(np.mean(np.square(errors)))))
            if trace is not None:
                first_traces[k] = [float(v) for v in trace]

    estimators = {}
    for spec in specs:
        k = spec.key
        errors = np.concatenate(pooled_errors[k])
        runtimes = np.concatenate(pooled_runtimes[k])
        estimators[k] = {
            "estimator": spec.name,
            "config": {"window": spec.window, "max_iters": spec.max_iters,
                       "iter_tol": spec.iter_tol, "kernel": spec.kernel,
                       "delta": spec.delta, "jacobian": spec.jacobian},
            "metrics": metrics(errors, runtimes).as_dict(),
            "runtime_samples_ms": [1e3 * float(v) for v in runtimes],
            "per_seed_rmse": per_seed_rmse[k],
            "first_epoch_residuals": first_traces[k],
        }
    return {
        "spec": {"scheme": scheme_name, "runs": n_runs, "base_seed": base_seed,
                 "epochs": epochs, "estimators": keys, "timing": timing},
        "estimators": estimators,
    }


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------


def time_estimator(step, warmup: int = 3, reps: int = 10) -> list:
    """Wall-clock samples (seconds) for a step closure, after warmup calls."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    for _ in range(warmup):
        step()
    samples = []
    for _ in range(reps):
        start = time.perf_counter()
        step()
        samples.append(time.perf_counter() - start)
    return samples
