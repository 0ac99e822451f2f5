"""Shared numeric types: state/belief containers, motion and range-measurement
models, robust kernels, and whitening helpers.

Everything here is an immutable value type validated on construction, so
instances can be shared freely between the recursive filters and the
factor-graph solvers without defensive copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

STATE_DIM = 4  # state ordering is [px, py, vx, vy]

L2 = "l2"
HUBER = "huber"
DEFAULT_HUBER_DELTA = 1.345  # classical 95%-efficiency tuning constant


class DomainError(ValueError):
    """Input outside an operation's mathematical domain."""


class DecompositionError(ValueError):
    """A matrix that must be SPD failed its Cholesky factorization."""

    def __init__(self, name: str, detail: str = ""):
        self.matrix_name = name
        msg = f"matrix '{name}' is not symmetric positive definite"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class EstimationError(RuntimeError):
    """Numerical failure inside an estimator run, tagged with its epoch."""


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Return 0.5 * (M + M^T). Apply after every covariance-producing step."""
    return 0.5 * (matrix + matrix.T)


def spd_cholesky(matrix: np.ndarray, name: str) -> np.ndarray:
    """Lower Cholesky factor of `matrix`; raises DecompositionError naming it."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(name) from exc


def spd_inverse(matrix: np.ndarray, name: str) -> np.ndarray:
    """Inverse of an SPD matrix via Cholesky solves (never np.linalg.inv)."""
    chol = spd_cholesky(matrix, name)
    half = solve_triangular(chol, np.eye(matrix.shape[0]), lower=True)
    return symmetrize(half.T @ half)


def whiten(residual: np.ndarray, covariance: np.ndarray) -> np.ndarray:
    """Return L^-1 * residual where covariance = L L^T (lower Cholesky)."""
    residual = np.asarray(residual, dtype=float)
    if not np.all(np.isfinite(residual)):
        raise DomainError("residual contains non-finite entries")
    chol = spd_cholesky(np.asarray(covariance, dtype=float), "covariance")
    return solve_triangular(chol, residual, lower=True)


def whiten_with(chol: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """whiten() fast path when the Cholesky factor is already available."""
    return solve_triangular(chol, residual, lower=True)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    """Planar position + velocity, ordered [px, py, vx, vy]."""

    px: float
    py: float
    vx: float
    vy: float

    def __post_init__(self):
        for name in ("px", "py", "vx", "vy"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"state component '{name}' is not finite")

    @classmethod
    def from_array(cls, arr) -> "StateVector":
        arr = np.asarray(arr, dtype=float).reshape(-1)
        if arr.shape != (STATE_DIM,):
            raise ValueError(f"state array must have {STATE_DIM} entries, got {arr.shape}")
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.vx, self.vy])

    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian state belief (mean, covariance).

    The covariance is checked for symmetry (1e-12 relative), re-symmetrized,
    and Cholesky-validated on construction, so a belief in hand is always SPD.
    """

    mean: StateVector
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"covariance must be {STATE_DIM}x{STATE_DIM}, got {cov.shape}")
        scale = float(np.abs(cov).max())
        if scale > 0.0 and float(np.abs(cov - cov.T).max()) > 1e-12 * scale:
            raise DecompositionError("covariance", "asymmetric beyond 1e-12 relative")
        cov = symmetrize(cov)
        spd_cholesky(cov, "covariance")
        object.__setattr__(self, "covariance", cov)

    def mean_array(self) -> np.ndarray:
        return self.mean.as_array()


# ---------------------------------------------------------------------------
# process / measurement models
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """Linear transition x_k = F x_{k-1} + v with v ~ N(0, Q), over a step dt."""

    F: np.ndarray
    Q: np.ndarray
    dt: float

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if F.shape != (STATE_DIM, STATE_DIM) or Q.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("F and Q must be 4x4")
        if not np.all(np.isfinite(F)):
            raise DomainError("F contains non-finite entries")
        if self.dt <= 0.0:
            raise DomainError("dt must be positive")
        spd_cholesky(symmetrize(Q), "Q")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", symmetrize(Q))

    @classmethod
    def constant_velocity(cls, dt: float, q_diag) -> "ProcessModel":
        """Constant-velocity transition: unit diagonal with dt coupling blocks."""
        F = np.eye(STATE_DIM)
        F[0, 2] = dt
        F[1, 3] = dt
        return cls(F, np.diag(np.asarray(q_diag, dtype=float)), dt)

    @cached_property
    def chol_q(self) -> np.ndarray:
        return np.linalg.cholesky(self.Q)


_MIN_ANCHOR_DISTANCE = 1e-9


def toa_range_values(anchors: np.ndarray, position: np.ndarray) -> np.ndarray:
    """Euclidean range from `position` (2,) to each anchor row of `anchors`.

    Written as sqrt(dx*dx + dy*dy) on purpose: the dual-number path computes
    the same expression, keeping the two Jacobian routes bit-identical.
    """
    diff = np.asarray(position, dtype=float) - np.asarray(anchors, dtype=float)
    ranges = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
    if np.any(ranges <= _MIN_ANCHOR_DISTANCE):
        idx = int(np.argmin(ranges))
        raise DomainError(f"receiver position coincides with anchor {idx}")
    return ranges


def toa_position_jacobian(anchors: np.ndarray, position: np.ndarray) -> np.ndarray:
    """d(range_i)/d(position): unit vectors from each anchor to the receiver."""
    diff = np.asarray(position, dtype=float) - np.asarray(anchors, dtype=float)
    ranges = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
    if np.any(ranges <= _MIN_ANCHOR_DISTANCE):
        idx = int(np.argmin(ranges))
        raise DomainError(f"receiver position coincides with anchor {idx}")
    return diff / ranges[:, None]


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Range (time-of-arrival) measurement model: one range per anchor.

    h_i(x) = ||pos(x) - anchor_i||, noise N(0, R). The Jacobian rows are
    [dx/r, dy/r, 0, 0]; velocity is never directly observed.
    """

    anchors: np.ndarray  # (m, 2)
    R: np.ndarray        # (m, m) SPD

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if anchors.ndim != 2 or anchors.shape[1] != 2:
            raise ValueError("anchors must be an (m, 2) array")
        if anchors.shape[0] < 3:
            raise ValueError("planar range localization needs at least 3 anchors")
        if R.shape != (anchors.shape[0], anchors.shape[0]):
            raise ValueError("R must be m x m")
        spd_cholesky(symmetrize(R), "R")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "R", symmetrize(R))

    @property
    def dim(self) -> int:
        return self.anchors.shape[0]

    @cached_property
    def chol_r(self) -> np.ndarray:
        return np.linalg.cholesky(self.R)

    def predict(self, state: np.ndarray) -> np.ndarray:
        return toa_range_values(self.anchors, np.asarray(state, dtype=float)[:2])

    def jacobian(self, state: np.ndarray) -> np.ndarray:
        jac = np.zeros((self.dim, STATE_DIM))
        jac[:, :2] = toa_position_jacobian(self.anchors, np.asarray(state, dtype=float)[:2])
        return jac

    def jacobian_autodiff(self, state: np.ndarray) -> np.ndarray:
        """Jacobian via forward-mode duals; matches jacobian() bit-for-bit."""
        from . import autodiff  # late import: autodiff is a leaf module

        return autodiff.jacobian_ad(self.dual_ranges, state)

    def dual_ranges(self, x):
        """Range expressions evaluated on dual scalars (or plain floats)."""
        out = []
        for i, (ax, ay) in enumerate(self.anchors):
            try:
                dx = x[0] - ax
                dy = x[1] - ay
                out.append((dx * dx + dy * dy).sqrt())
            except DomainError as exc:
                raise DomainError(f"range row {i}: {exc}") from exc
        return out


@dataclass(frozen=True, eq=False)
class LinearMeasurementModel:
    """Linear measurement z = H x + w, w ~ N(0, R).

    This is what the plain Kalman filter consumes; on it the EKF collapses to
    the KF exactly because the Jacobian no longer depends on the state.
    """

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if H.ndim != 2 or H.shape[1] != STATE_DIM:
            raise ValueError("H must be (m, 4)")
        if R.shape != (H.shape[0], H.shape[0]):
            raise ValueError("R must be m x m")
        spd_cholesky(symmetrize(R), "R")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", symmetrize(R))

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @cached_property
    def chol_r(self) -> np.ndarray:
        return np.linalg.cholesky(self.R)

    def predict(self, state: np.ndarray) -> np.ndarray:
        return self.H @ np.asarray(state, dtype=float)

    def jacobian(self, state: np.ndarray) -> np.ndarray:
        return self.H


# ---------------------------------------------------------------------------
# robust kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobustKernel:
    """Robust loss applied to whitened (unit-variance) residual components."""

    kind: str = L2
    delta: float = DEFAULT_HUBER_DELTA

    def __post_init__(self):
        if self.kind not in (L2, HUBER):
            raise ValueError(f"unknown kernel kind '{self.kind}'")
        if self.delta <= 0.0:
            raise ValueError("kernel delta must be positive")

    @classmethod
    def l2(cls) -> "RobustKernel":
        return cls(L2)

    @classmethod
    def huber(cls, delta: float = DEFAULT_HUBER_DELTA) -> "RobustKernel":
        return cls(HUBER, delta)


def kernel_rho(kernel: RobustKernel, r: float) -> float:
    """Robust loss rho(r). L2: r^2/2. Huber: quadratic core, linear tails."""
    if not math.isfinite(r):
        raise DomainError("kernel argument is not finite")
    if kernel.kind == L2:
        return 0.5 * r * r
    a = abs(r)
    if a <= kernel.delta:
        return 0.5 * r * r
    return kernel.delta * a - 0.5 * kernel.delta * kernel.delta


def kernel_weight(kernel: RobustKernel, r: float) -> float:
    """IRLS weight psi(r) = rho'(r)/r, with the limit convention psi(0) = 1."""
    if not math.isfinite(r):
        raise DomainError("kernel argument is not finite")
    if kernel.kind == L2:
        return 1.0
    a = abs(r)
    if a <= kernel.delta:
        return 1.0
    return kernel.delta / a


def residual_weights(kernel: RobustKernel, residual: np.ndarray) -> np.ndarray:
    """Vectorized kernel_weight over a whitened residual vector."""
    residual = np.asarray(residual, dtype=float)
    if kernel.kind == L2:
        return np.ones_like(residual)
    weights = np.ones_like(residual)
    a = np.abs(residual)
    mask = a > kernel.delta
    weights[mask] = kernel.delta / a[mask]
    return weights
