"""Closed-form recursive filters: KF, EKF, IEKF, REKF, RIEKF.

All five share one predict stage and one update core. The update core runs a
Gauss-Newton iteration on the single-epoch MAP problem

    min_x  ||x - x_pred||^2_{P_pred}  +  ||z - h(x)||^2_R

expressed in gain form. Each pass relinearizes h at the current iterate and
recomputes the IRLS weights of the robust kernel on the whitened prior and
measurement residuals. The variants are then just fixed corners of the
(iterations, kernel) grid:

    EKF  = 1 pass,  L2        IEKF  = iterated, L2
    REKF = 1 pass,  robust    RIEKF = iterated, robust

and the plain KF is the single pass on a linear measurement model, where the
Jacobian no longer depends on the state. Because every variant runs the same
code path, the degenerations (IEKF with one iteration == EKF, robust kernels
with all-unit weights == their L2 twins) hold bit-for-bit.

The covariance update keeps the literal (I - K H) P form rather than the
Joseph form: the factor-graph re-expression of these filters solves the same
normal equations, and matching its arithmetic is worth more here than the
extra symmetry margin.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import sim
from .core import (
    DecompositionError,
    DomainError,
    EstimationError,
    GaussianBelief,
    ProcessModel,
    RobustKernel,
    StateVector,
    L2,
    residual_weights,
    spd_cholesky,
    symmetrize,
)
from .defaults import ITER_TOL, MAX_ITERS
from .reports import EpochRecord, IterationTrace, RunReport

_KINDS = ("kf", "ekf", "iekf", "rekf", "riekf")
_SINGLE_PASS = ("kf", "ekf", "rekf")
_L2_ONLY = ("kf", "ekf", "iekf")


@dataclass(frozen=True)
class KfvVariant:
    """One member of the filter family plus its iteration/kernel settings."""

    kind: str
    max_iters: int = 1
    iter_tol: float = ITER_TOL
    kernel: RobustKernel = field(default_factory=RobustKernel.l2)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown filter kind '{self.kind}'")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.iter_tol <= 0.0:
            raise ValueError("iter_tol must be positive")
        if self.kind in _SINGLE_PASS and self.max_iters != 1:
            raise ValueError(f"'{self.kind}' is a single-pass filter (max_iters must be 1)")
        if self.kind in _L2_ONLY and self.kernel.kind != L2:
            raise ValueError(f"'{self.kind}' does not take a robust kernel")

    @classmethod
    def ekf(cls) -> "KfvVariant":
        return cls("ekf")

    @classmethod
    def iekf(cls, max_iters: int = MAX_ITERS, iter_tol: float = ITER_TOL) -> "KfvVariant":
        return cls("iekf", max_iters, iter_tol)

    @classmethod
    def rekf(cls, kernel: RobustKernel | None = None) -> "KfvVariant":
        return cls("rekf", kernel=kernel or RobustKernel.huber())

    @classmethod
    def riekf(cls, kernel: RobustKernel | None = None, max_iters: int = MAX_ITERS,
              iter_tol: float = ITER_TOL) -> "KfvVariant":
        return cls("riekf", max_iters, iter_tol, kernel or RobustKernel.huber())


def kf_predict(belief: GaussianBelief, model: ProcessModel) -> GaussianBelief:
    """Time update: mean F x, covariance F P F^T + Q (re-symmetrized)."""
    mean = model.F @ belief.mean_array()
    cov = symmetrize(model.F @ belief.covariance @ model.F.T + model.Q)
    return GaussianBelief(StateVector.from_array(mean), cov)


def _reweighted(cov: np.ndarray, chol: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Effective covariance L diag(1/psi) L^T of a down-weighted residual block.

    All-unit weights return `cov` itself (not L L^T), so kernel-free runs and
    robust runs with no active tail reproduce the unweighted filter exactly.
    """
    if np.all(weights == 1.0):
        return cov
    return symmetrize((chol / weights[None, :]) @ chol.T)


def _iterated_update(belief, model, z, kernel, max_iters, tol):
    """Shared update core; returns (posterior belief, IterationTrace)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("measurement contains non-finite entries")
    x_pred = belief.mean_array()
    P_pred = belief.covariance
    chol_p = spd_cholesky(P_pred, "predicted covariance")
    chol_r = model.chol_r
    R = model.R
    eye = np.eye(x_pred.shape[0])

    x = x_pred
    trace = IterationTrace()
    K = H = P_w = None
    for _ in range(max_iters):
        H = model.jacobian(x)
        r_meas = z - model.predict(x)
        r_prior = x - x_pred  # exactly zero on the first pass
        w_x = residual_weights(kernel, solve_triangular(chol_p, r_prior, lower=True))
        w_y = residual_weights(kernel, solve_triangular(chol_r, r_meas, lower=True))
        P_w = _reweighted(P_pred, chol_p, w_x)
        R_w = _reweighted(R, chol_r, w_y)
        S = H @ P_w @ H.T + R_w
        try:
            # K = P_w H^T S^-1, computed by solving against S
            K = np.linalg.solve(S, H @ P_w).T
        except np.linalg.LinAlgError as exc:
            raise DecompositionError("innovation covariance") from exc
        # Gauss-Newton step around the current iterate; the H r_prior term
        # vanishes on the first pass, leaving the textbook single update
        x_new = x_pred + K @ (r_meas + H @ r_prior)
        delta = x_new - x
        x = x_new
        trace.append(x, _whitened_norm(x, x_pred, chol_p, model, z, chol_r))
        if float(np.linalg.norm(delta)) < tol:
            break

    P_post = symmetrize((eye - K @ H) @ P_w)
    posterior = GaussianBelief(StateVector.from_array(x), P_post)
    return posterior, trace


def _whitened_norm(x, x_pred, chol_p, model, z, chol_r):
    rp = solve_triangular(chol_p, x - x_pred, lower=True)
    rm = solve_triangular(chol_r, z - model.predict(x), lower=True)
    return float(np.sqrt(rp @ rp + rm @ rm))


def kf_update(belief, model, z):
    """Linear Kalman update; `model` should be a LinearMeasurementModel."""
    return _iterated_update(belief, model, z, RobustKernel.l2(), 1, ITER_TOL)


def ekf_update(belief, model, z):
    """Single update pass, h linearized at the predicted mean."""
    return _iterated_update(belief, model, z, RobustKernel.l2(), 1, ITER_TOL)


def iekf_update(belief, model, z, max_iters: int = MAX_ITERS, tol: float = ITER_TOL):
    """Iterated update: relinearize at each accepted iterate until the step
    norm drops below tol or max_iters passes run out."""
    return _iterated_update(belief, model, z, RobustKernel.l2(), max_iters, tol)


def rekf_update(belief, model, z, kernel: RobustKernel | None = None):
    """Single robust update pass. The prior residual is zero at the predicted
    mean, so its weights are all one (psi(0) = 1) and only the measurement
    block is down-weighted."""
    return _iterated_update(belief, model, z, kernel or RobustKernel.huber(), 1, ITER_TOL)


def riekf_update(belief, model, z, kernel: RobustKernel | None = None,
                 max_iters: int = MAX_ITERS, tol: float = ITER_TOL):
    """Iterated robust update: relinearize h and recompute both weight blocks
    at every iterate."""
    return _iterated_update(belief, model, z, kernel or RobustKernel.huber(), max_iters, tol)


def update_for(variant: KfvVariant):
    """Update function (belief, model, z) -> (belief, trace) for a variant."""

    def _update(belief, model, z):
        return _iterated_update(belief, model, z, variant.kernel,
                                variant.max_iters, variant.iter_tol)

    return _update


def run_filter(variant: KfvVariant, dataset: sim.Dataset, init: GaussianBelief,
               process: ProcessModel | None = None, meas=None) -> RunReport:
    """Run predict/update over every epoch of a dataset.

    Models default to the dataset's constant-velocity step and nominal-noise
    range model. Numerical failures are re-raised with the epoch attached.
    """
    process = process if process is not None else sim.default_process_model(dataset)
    meas = meas if meas is not None else sim.default_measurement_model(dataset)
    update = update_for(variant)
    belief = init
    records = []
    for k in range(dataset.epochs):
        start = time.perf_counter()
        try:
            predicted = kf_predict(belief, process)
            belief, trace = update(predicted, meas, dataset.ranges[k])
        except (DecompositionError, DomainError, ValueError) as exc:
            raise EstimationError(f"epoch {k + 1}: {exc}") from exc
        records.append(EpochRecord(belief.mean, belief.covariance, trace,
                                   time.perf_counter() - start))
    config = {"max_iters": variant.max_iters, "iter_tol": variant.iter_tol,
              "kernel": variant.kernel.kind, "delta": variant.kernel.delta}
    return RunReport(variant.kind, config, dataset.scheme.name, dataset.seed, records)
