"""Factor-graph estimation over a sliding window of states.

Two estimators live here, sharing one Gauss-Newton core:

* refgo: the recursive, window-1 re-expression of the filter family. Each
  epoch builds a two-state graph {x_{k-1}, x_k} from the carried prior plus
  the propagation factor, Schur-marginalizes the old state into a predicted
  prior on x_k, then solves the one-state graph with the measurement factor
  attached. With matched iteration counts and kernels this reproduces the
  closed-form filters to numerical round-off.

* sliding-window (sw-fgo): keeps the last w states as variables. When a state
  leaves the window it is NOT marginalized: its final estimate is frozen and
  the connecting propagation factor keeps pulling the oldest in-window state
  toward F * (frozen estimate) with covariance Q. The frozen anchor carries
  no uncertainty into the graph, so the window systematically over-trusts its
  own history — by design, since that is the failure mode worth measuring.
  Consequently sw-fgo with w = 1 is NOT the factor-graph EKF: the EKF's
  predicted prior has covariance F P F^T + Q, the anchored window only Q.

Solves go through Cholesky factorizations of the assembled normal equations;
no explicit inverses. Robust kernels enter as IRLS weights on whitened
per-factor residuals, assembled as  H = sum_i J_i^T W_i^{-1/2} Psi_i W_i^{-1/2} J_i.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import sim
from .core import (
    DecompositionError,
    DomainError,
    EstimationError,
    GaussianBelief,
    MeasurementModel,
    ProcessModel,
    RobustKernel,
    StateVector,
    STATE_DIM,
    residual_weights,
    spd_cholesky,
    spd_inverse,
    symmetrize,
)
from .defaults import ITER_TOL, MAX_ITERS
from .reports import EpochRecord, IterationTrace, RunReport

ANALYTIC = "analytic"
AD = "ad"


class RankDeficiencyError(ValueError):
    """Normal equations lost rank; carries the unconstrained variable indices."""

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(
            f"normal equations are rank deficient; unconstrained variables: {self.indices}"
        )


@dataclass(frozen=True)
class SolverOptions:
    """Gauss-Newton settings: iteration budget, step tolerance, robust kernel."""

    max_iters: int = 1
    tol: float = ITER_TOL
    kernel: RobustKernel = field(default_factory=RobustKernel.l2)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


# ---------------------------------------------------------------------------
# factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PriorFactor:
    """Gaussian prior on one state, stored in information form."""

    node: int
    mean: np.ndarray
    information: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        info = symmetrize(np.asarray(self.information, dtype=float))
        if mean.shape != (STATE_DIM,) or info.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("prior factor must cover one 4-dim state")
        spd_cholesky(info, "prior information")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "information", info)

    @cached_property
    def covariance(self) -> np.ndarray:
        return spd_inverse(self.information, "prior information")

    @cached_property
    def chol_cov(self) -> np.ndarray:
        return np.linalg.cholesky(self.covariance)


@dataclass(frozen=True, eq=False)
class PropagationFactor:
    """Constant-velocity link x_to = F x_from + v, v ~ N(0, Q).

    from_node None marks the anchored form: the source state is a frozen
    estimate outside the window (`anchor`), treated as exact. Only to_node is
    a variable then.
    """

    from_node: int | None
    to_node: int
    model: ProcessModel
    anchor: np.ndarray | None = None

    def __post_init__(self):
        if (self.from_node is None) != (self.anchor is not None):
            raise ValueError("anchored propagation needs from_node=None plus an anchor state")
        if self.anchor is not None:
            object.__setattr__(self, "anchor",
                               np.asarray(self.anchor, dtype=float).reshape(STATE_DIM))


@dataclass(frozen=True, eq=False)
class MeasurementFactor:
    """Range measurement z attached to one window state."""

    node: int
    model: MeasurementModel
    z: np.ndarray
    jacobian_mode: str = ANALYTIC

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if z.shape != (self.model.dim,):
            raise ValueError(f"measurement must have {self.model.dim} entries")
        if self.jacobian_mode not in (ANALYTIC, AD):
            raise ValueError(f"unknown jacobian mode '{self.jacobian_mode}'")
        object.__setattr__(self, "z", z)


@dataclass
class FactorGraph:
    """Ordered window states (estimates) plus the factors that tie them."""

    estimates: list = field(default_factory=list)
    factors: list = field(default_factory=list)

    def add_variable(self, estimate) -> int:
        self.estimates.append(np.asarray(estimate, dtype=float).reshape(STATE_DIM).copy())
        return len(self.estimates) - 1

    @property
    def size(self) -> int:
        return len(self.estimates)


@dataclass
class SolveResult:
    """Gauss-Newton output: estimates, final normal-equation matrix, trace.

    `information` is the (weighted) J^T W^-1 J assembled at the linearization
    point of the final performed iteration — the matrix that produced the
    accepted step, matching how the closed-form filters form their posterior
    covariance.
    """

    estimates: list
    information: np.ndarray
    trace: IterationTrace


# ---------------------------------------------------------------------------
# linearization and assembly
# ---------------------------------------------------------------------------


def _factor_terms(factor, x):
    """(blocks, residual, chol_of_factor_covariance) at linearization x.

    Residual convention e(x): prior x - mean; propagation x_to - F x_from;
    measurement z - h(x). `blocks` maps node index -> de/dx_node.
    """
    if isinstance(factor, PriorFactor):
        e = x[factor.node] - factor.mean
        return ((factor.node, np.eye(STATE_DIM)),), e, factor.chol_cov
    if isinstance(factor, PropagationFactor):
        model = factor.model
        if factor.from_node is None:
            e = x[factor.to_node] - model.F @ factor.anchor
            return ((factor.to_node, np.eye(STATE_DIM)),), e, model.chol_q
        e = x[factor.to_node] - model.F @ x[factor.from_node]
        return ((factor.from_node, -model.F), (factor.to_node, np.eye(STATE_DIM))), e, model.chol_q
    if isinstance(factor, MeasurementFactor):
        state = x[factor.node]
        e = factor.z - factor.model.predict(state)
        if factor.jacobian_mode == AD:
            jac = factor.model.jacobian_autodiff(state)
        else:
            jac = factor.model.jacobian(state)
        return ((factor.node, -jac),), e, factor.model.chol_r
    raise TypeError(f"unknown factor type {factor!r}")


def assemble_normal_equations(graph: FactorGraph, linearization, kernel: RobustKernel):
    """Build (H, b, residual_norm) at the given linearization points.

    H = sum J^T W^-1/2 Psi W^-1/2 J with per-factor IRLS weights Psi from the
    kernel on whitened residuals; b is the matching right-hand side for the
    step delta (solve H delta = b, then x += delta). residual_norm is the
    plain (unweighted) whitened residual 2-norm.
    """
    x = [np.asarray(v, dtype=float) for v in linearization]
    n = len(x)
    if n != graph.size:
        raise ValueError("linearization must cover every window state")
    dim = n * STATE_DIM
    H = np.zeros((dim, dim))
    b = np.zeros(dim)
    sq_norm = 0.0
    for factor in graph.factors:
        blocks, e, chol = _factor_terms(factor, x)
        ew = solve_triangular(chol, e, lower=True)
        sq_norm += float(ew @ ew)
        psi = residual_weights(kernel, ew)
        weighted = psi * ew
        whitened_blocks = [(node, solve_triangular(chol, A, lower=True)) for node, A in blocks]
        for node_i, Awi in whitened_blocks:
            si = node_i * STATE_DIM
            b[si:si + STATE_DIM] -= Awi.T @ weighted
            for node_j, Awj in whitened_blocks:
                sj = node_j * STATE_DIM
                H[si:si + STATE_DIM, sj:sj + STATE_DIM] += Awi.T @ (psi[:, None] * Awj)
    return symmetrize(H), b, float(np.sqrt(sq_norm))


def residual_norm(graph: FactorGraph, linearization) -> float:
    """Whitened stacked residual 2-norm at the given linearization points."""
    x = [np.asarray(v, dtype=float) for v in linearization]
    sq = 0.0
    for factor in graph.factors:
        _, e, chol = _factor_terms(factor, x)
        ew = solve_triangular(chol, e, lower=True)
        sq += float(ew @ ew)
    return float(np.sqrt(sq))


def _cholesky_or_rank_error(graph: FactorGraph, H: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        unconstrained = []
        for i in range(graph.size):
            block = H[i * STATE_DIM:(i + 1) * STATE_DIM, i * STATE_DIM:(i + 1) * STATE_DIM]
            if np.abs(np.diag(block)).max(initial=0.0) == 0.0:
                unconstrained.append(i)
        raise RankDeficiencyError(unconstrained) from None


def gauss_newton_solve(graph: FactorGraph, init, options: SolverOptions) -> SolveResult:
    """Plain Gauss-Newton (no damping): iterate delta = H^-1 b, relinearize.

    Stops when ||delta|| < tol or the iteration budget runs out. The trace
    records, per iteration, the newest window state after the step and the
    whitened residual norm at the stepped estimates.
    """
    x = [np.asarray(v, dtype=float).reshape(STATE_DIM).copy() for v in init]
    trace = IterationTrace()
    H = None
    for _ in range(options.max_iters):
        H, b, _ = assemble_normal_equations(graph, x, options.kernel)
        chol = _cholesky_or_rank_error(graph, H)
        delta = cho_solve((chol, True), b)
        x = [xi + delta[i * STATE_DIM:(i + 1) * STATE_DIM] for i, xi in enumerate(x)]
        trace.append(x[-1], residual_norm(graph, x))
        if float(np.linalg.norm(delta)) < options.tol:
            break
    return SolveResult(x, H, trace)


# ---------------------------------------------------------------------------
# marginalization (Schur complement)
# ---------------------------------------------------------------------------


def marginalize_oldest(graph: FactorGraph, solution) -> PriorFactor:
    """Eliminate the oldest state from the graph's normal equations.

    Assembles (H, b) kernel-free at the solution estimates and takes the Schur
    complement of the leading block. The survivor keeps exactly the
    information the eliminated state implied about it — this is the lossless
    predict step, in contrast to the sliding window's frozen-anchor drop.
    Returns the equivalent PriorFactor on the remaining state.
    """
    estimates = solution.estimates if hasattr(solution, "estimates") else solution
    if graph.size != 2:
        raise ValueError("marginalize_oldest expects a two-state window")
    H, b, _ = assemble_normal_equations(graph, estimates, RobustKernel.l2())
    d = STATE_DIM
    H00, H01, H11 = H[:d, :d], H[:d, d:], H[d:, d:]
    b0, b1 = b[:d], b[d:]
    chol00 = spd_cholesky(H00, "eliminated block")
    X = cho_solve((chol00, True), H01)          # H00^-1 H01
    H_marg = symmetrize(H11 - H01.T @ X)
    b_marg = b1 - X.T @ b0
    chol_m = spd_cholesky(H_marg, "marginal information")
    mean = np.asarray(estimates[1], dtype=float) + cho_solve((chol_m, True), b_marg)
    return PriorFactor(0, mean, H_marg)


# ---------------------------------------------------------------------------
# recursive (window-1) estimator
# ---------------------------------------------------------------------------


def refgo_step(prior: PriorFactor, process: ProcessModel, meas: MeasurementModel,
               z, options: SolverOptions, jacobian_mode: str = ANALYTIC):
    """One predict/update cycle of the recursive factor-graph estimator.

    Returns (posterior PriorFactor, posterior GaussianBelief, IterationTrace).
    """
    x_hat = prior.mean
    x_pred = process.F @ x_hat
    pred_graph = FactorGraph([x_hat.copy(), x_pred.copy()],
                             [PriorFactor(0, x_hat, prior.information),
                              PropagationFactor(0, 1, process)])
    pred_prior = marginalize_oldest(pred_graph, [x_hat, x_pred])

    upd_graph = FactorGraph([pred_prior.mean.copy()],
                            [PriorFactor(0, pred_prior.mean, pred_prior.information),
                             MeasurementFactor(0, meas, z, jacobian_mode)])
    sol = gauss_newton_solve(upd_graph, [pred_prior.mean], options)
    posterior = PriorFactor(0, sol.estimates[0], sol.information)
    belief = GaussianBelief(StateVector.from_array(sol.estimates[0]),
                            spd_inverse(sol.information, "posterior information"))
    return posterior, belief, sol.trace


def run_refgo(dataset: sim.Dataset, init: GaussianBelief, options: SolverOptions,
              process: ProcessModel | None = None, meas: MeasurementModel | None = None,
              jacobian_mode: str = ANALYTIC, label: str = "fg") -> RunReport:
    """Run the recursive factor-graph estimator over a full dataset."""
    process = process if process is not None else sim.default_process_model(dataset)
    meas = meas if meas is not None else sim.default_measurement_model(dataset)
    prior = PriorFactor(0, init.mean_array(),
                        spd_inverse(init.covariance, "initial covariance"))
    records = []
    for k in range(dataset.epochs):
        start = time.perf_counter()
        try:
            prior, belief, trace = refgo_step(prior, process, meas, dataset.ranges[k],
                                              options, jacobian_mode)
        except (DecompositionError, DomainError, RankDeficiencyError, ValueError) as exc:
            raise EstimationError(f"epoch {k + 1}: {exc}") from exc
        records.append(EpochRecord(belief.mean, belief.covariance, trace,
                                   time.perf_counter() - start))
    config = {"max_iters": options.max_iters, "tol": options.tol,
              "kernel": options.kernel.kind, "delta": options.kernel.delta,
              "jacobian": jacobian_mode}
    return RunReport(label, config, dataset.scheme.name, dataset.seed, records)


# ---------------------------------------------------------------------------
# sliding-window estimator
# ---------------------------------------------------------------------------


@dataclass
class SlidingWindow:
    """Factor graph over the last w states plus the frozen anchor history.

    Starts with the initial belief as a one-state window (prior factor only);
    the first dropped state replaces that prior with the anchored propagation
    factor, and from then on the anchor is always the last estimate of the
    most recently dropped state, held fixed.
    """

    graph: FactorGraph

    @classmethod
    def from_init(cls, init: GaussianBelief) -> "SlidingWindow":
        graph = FactorGraph()
        idx = graph.add_variable(init.mean_array())
        graph.factors.append(PriorFactor(idx, init.mean_array(),
                                         spd_inverse(init.covariance, "initial covariance")))
        return cls(graph)

    def append_state(self, process: ProcessModel, meas: MeasurementModel, z,
                     jacobian_mode: str = ANALYTIC) -> int:
        prev = self.graph.size - 1
        idx = self.graph.add_variable(process.F @ self.graph.estimates[prev])
        self.graph.factors.append(PropagationFactor(prev, idx, process))
        self.graph.factors.append(MeasurementFactor(idx, meas, z, jacobian_mode))
        return idx

    def drop_oldest(self):
        """Slide the window: freeze the oldest estimate as the new anchor.

        Every factor touching the dropped state is discarded except its
        outgoing propagation factor, which is re-attached to the frozen
        estimate. No information is fused back — deliberately lossy.
        """
        frozen = self.graph.estimates.pop(0)
        new_factors = []
        for factor in self.graph.factors:
            if isinstance(factor, PriorFactor):
                if factor.node == 0:
                    continue  # prior leaves the graph with its state
                new_factors.append(PriorFactor(factor.node - 1, factor.mean,
                                               factor.information))
            elif isinstance(factor, MeasurementFactor):
                if factor.node == 0:
                    continue
                new_factors.append(MeasurementFactor(factor.node - 1, factor.model,
                                                     factor.z, factor.jacobian_mode))
            elif isinstance(factor, PropagationFactor):
                if factor.to_node == 0:
                    continue  # stale anchored link into the dropped state
                if factor.from_node == 0:
                    new_factors.append(PropagationFactor(None, factor.to_node - 1,
                                                         factor.model, frozen))
                elif factor.from_node is None:
                    new_factors.append(PropagationFactor(None, factor.to_node - 1,
                                                         factor.model, factor.anchor))
                else:
                    new_factors.append(PropagationFactor(factor.from_node - 1,
                                                         factor.to_node - 1, factor.model))
            else:
                raise TypeError(f"unknown factor type {factor!r}")
        self.graph.factors = new_factors


def swfgo_step(window: SlidingWindow, process: ProcessModel, meas: MeasurementModel,
               z, options: SolverOptions, w: int, jacobian_mode: str = ANALYTIC):
    """Advance the sliding window by one epoch and re-solve it.

    Appends x_k (initialized at F * previous estimate) with its propagation
    and measurement factors, drops the oldest state once the window exceeds w,
    then runs Gauss-Newton over the remaining states. Returns
    (window, newest-state GaussianBelief, IterationTrace).
    """
    if w < 1:
        raise ValueError("window size must be >= 1")
    window.append_state(process, meas, z, jacobian_mode)
    if window.graph.size > w:
        window.drop_oldest()
    sol = gauss_newton_solve(window.graph, window.graph.estimates, options)
    window.graph.estimates = [np.array(v) for v in sol.estimates]
    chol = spd_cholesky(sol.information, "window information")
    cov_full = cho_solve((chol, True), np.eye(sol.information.shape[0]))
    d = STATE_DIM
    newest_cov = symmetrize(cov_full[-d:, -d:])
    belief = GaussianBelief(StateVector.from_array(sol.estimates[-1]), newest_cov)
    return window, belief, sol.trace


def run_swfgo(dataset: sim.Dataset, init: GaussianBelief, options: SolverOptions, w: int,
              process: ProcessModel | None = None, meas: MeasurementModel | None = None,
              jacobian_mode: str = ANALYTIC, label: str = "sw-fgo") -> RunReport:
    """Run the sliding-window estimator over a full dataset."""
    process = process if process is not None else sim.default_process_model(dataset)
    meas = meas if meas is not None else sim.default_measurement_model(dataset)
    window = SlidingWindow.from_init(init)
    records = []
    for k in range(dataset.epochs):
        start = time.perf_counter()
        try:
            window, belief, trace = swfgo_step(window, process, meas, dataset.ranges[k],
                                               options, w, jacobian_mode)
        except (DecompositionError, DomainError, RankDeficiencyError, ValueError) as exc:
            raise EstimationError(f"epoch {k + 1}: {exc}") from exc
        records.append(EpochRecord(belief.mean, belief.covariance, trace,
                                   time.perf_counter() - start))
    config = {"window": w, "max_iters": options.max_iters, "tol": options.tol,
              "kernel": options.kernel.kind, "delta": options.kernel.delta,
              "jacobian": jacobian_mode}
    return RunReport(label, config, dataset.scheme.name, dataset.seed, records)


# ---------------------------------------------------------------------------
# debugging aid
# ---------------------------------------------------------------------------


def _factor_id(factor, ordinal: int) -> str:
    if isinstance(factor, PriorFactor):
        return f"{ordinal}:prior[{factor.node}]"
    if isinstance(factor, PropagationFactor):
        src = "anchor" if factor.from_node is None else str(factor.from_node)
        return f"{ordinal}:prop[{src}->{factor.to_node}]"
    if isinstance(factor, MeasurementFactor):
        return f"{ordinal}:meas[{factor.node}]"
    return f"{ordinal}:unknown"


def dump_normal_equations(graph: FactorGraph, linearization, kernel: RobustKernel) -> dict:
    """JSON-ready snapshot of the window's (H, b) plus per-factor residuals."""
    H, b, norm = assemble_normal_equations(graph, linearization, kernel)
    x = [np.asarray(v, dtype=float) for v in linearization]
    factors = {}
    for ordinal, factor in enumerate(graph.factors):
        _, e, chol = _factor_terms(factor, x)
        ew = solve_triangular(chol, e, lower=True)
        factors[_factor_id(factor, ordinal)] = {
            "type": type(factor).__name__,
            "residual": e.tolist(),
            "whitened_residual": ew.tolist(),
            "weights": residual_weights(kernel, ew).tolist(),
        }
    return {"H": H.tolist(), "b": b.tolist(), "residual_norm": norm, "factors": factors}
