"""ADMM-GAMP: a double-loop minimizer of the large-system-limit BFE.

The inner loop is an ADMM iteration on the linearized objective, with the
linearization weights ``tau_r, tau_p`` held fixed.  The outer loop refreshes
those weights from the entropy gradient, optionally damped by ``theta``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .bfe import BeliefParams, bfe_value, clamp_tau_s, taubar_r_from
from .errors import InvariantViolation, NumericalError, ParameterError
from .estimators import PRODUCTION_NODES, ScalarEstimator
from .linalg import cg_solve
from .problem import GlmProblem


@dataclass
class SolverConfig:
    max_outer: int = 10_000
    inner_per_outer: int = 10
    theta: float = 1.0
    cg_iters: int = 3
    cg_tol: float = 1e-12
    term_tol: float = 1e-4
    max_total_iters: int = 200
    mode: str = "mmse"
    map_variance_rule: bool = False
    # "cg" (warm-started, cg_iters) or "direct" (Cholesky, exact)
    v_solver: str = "cg"
    # if set, each inner loop runs until moment and dual gaps fall below it
    inner_tol: Optional[float] = None
    max_inner: int = 100_000
    divergence_guard: float = 1e8
    record_bfe: bool = False
    bfe_nodes: int = PRODUCTION_NODES
    # if set, convergence also requires every fixed-point gap below it
    gap_tol: Optional[float] = None
    # fallback damping values tried in order when a run fails to converge
    theta_ladder: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ParameterError("theta must lie in [0, 1]")
        for name in ("max_outer", "inner_per_outer", "cg_iters", "max_total_iters", "max_inner"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1")
        for name in ("cg_tol", "term_tol"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")
        if self.mode not in ("mmse", "map"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.v_solver not in ("cg", "direct"):
            raise ParameterError(f"unknown v_solver {self.v_solver!r}")
        if any(not 0.0 < th <= 1.0 for th in self.theta_ladder):
            raise ParameterError("theta_ladder entries must lie in (0, 1]")


@dataclass
class SolverState:
    x: np.ndarray
    z: np.ndarray
    q: np.ndarray
    s: np.ndarray
    v: np.ndarray
    r: np.ndarray
    p: np.ndarray
    tau_x: np.ndarray
    tau_r: np.ndarray
    taubar_r: np.ndarray
    tau_z: np.ndarray
    tau_p: np.ndarray
    taubar_p: np.ndarray
    tau_s: np.ndarray
    iteration: int = 0
    clamp_events: int = 0

    def means(self) -> np.ndarray:
        """The mean-type variables ``(x, z, q, s, v)`` stacked."""
        return np.concatenate([self.x, self.z, self.q, self.s, self.v])

    def beliefs(self) -> BeliefParams:
        return BeliefParams(self.r, self.tau_r, self.p, self.tau_p)


@dataclass(frozen=True)
class FixedPointResiduals:
    moment_gap: float
    dual_gap: float
    variance_gap: float

    def max(self) -> float:
        return max(self.moment_gap, self.dual_gap, self.variance_gap)


@dataclass
class RunReport:
    x_hat: np.ndarray
    z_hat: np.ndarray
    tau_x: np.ndarray
    tau_z: np.ndarray
    nmse_trajectory: np.ndarray
    bfe_trajectory: Optional[np.ndarray]
    residuals: FixedPointResiduals
    converged: bool
    iterations_used: int
    clamp_events: int
    seed: Optional[int]
    wall_time: float
    diverged: bool = False
    state: object = None
    extras: dict = field(default_factory=dict)


def _rel(a, b) -> float:
    nb = np.linalg.norm(b)
    na = np.linalg.norm(a)
    return float(na / nb) if nb > 0 else float(na)


def initial_state(problem: GlmProblem) -> SolverState:
    """``tau_r = tau_p = 1``, ``v`` at the prior mean, ``q = s = 0``."""
    m, n = problem.m, problem.n
    mean, var = problem.prior.prior_moments(n)
    v = mean.astype(float)
    z = problem.A @ v
    return SolverState(
        x=v.copy(), z=z, q=np.zeros(n), s=np.zeros(m), v=v, r=v.copy(), p=z.copy(),
        tau_x=var.astype(float), tau_r=np.ones(n), taubar_r=np.ones(n),
        tau_z=np.ones(m), tau_p=np.ones(m), taubar_p=np.ones(m), tau_s=np.ones(m),
    )


def _solve_v(state, A, rhs, config) -> np.ndarray:
    dp, dr = 1.0 / state.tau_p, 1.0 / state.tau_r
    if config.v_solver == "direct":
        M = (A.T * dp) @ A
        M[np.diag_indices_from(M)] += dr
        return sla.cho_solve(sla.cho_factor(M), rhs)
    return cg_solve(lambda u: A.T @ (dp * (A @ u)) + dr * u, rhs, state.v,
                    config.cg_iters, config.cg_tol)


def inner_admm_step(state: SolverState, g_x, g_z, A, S, config: SolverConfig) -> SolverState:
    """One ADMM iteration with the linearization ``tau_r, tau_p`` held fixed."""
    Av = A @ state.v
    r = state.v - state.tau_r * state.q
    p = Av - state.tau_p * state.s
    x, tau_x = g_x(r, state.tau_r)
    z, tau_z = g_z(p, state.tau_p)
    q = state.q + (x - state.v) / state.tau_r
    s = state.s + (z - Av) / state.tau_p
    rhs = A.T @ (z / state.tau_p + s) + x / state.tau_r + q
    new = replace(state, x=x, z=z, q=q, s=s, r=r, p=p, tau_x=tau_x, tau_z=tau_z,
                  iteration=state.iteration + 1)
    new.v = _solve_v(new, A, rhs, config)
    if not all(np.all(np.isfinite(a)) for a in (x, z, q, s, new.v, tau_x, tau_z)):
        raise NumericalError("non-finite iterate in ADMM step", state=new)
    return new


def gradient_update(state: SolverState, S, config: SolverConfig) -> SolverState:
    """Entropy-gradient terms ``taubar_p, tau_s, taubar_r`` at the current variances."""
    taubar_p = S @ state.tau_x
    if config.mode == "map" and config.map_variance_rule:
        ref = state.tau_p
    else:
        ref = taubar_p
    tau_s, clamped = clamp_tau_s((1.0 - state.tau_z / ref) / ref)
    taubar_r = taubar_r_from(tau_s, S)
    return replace(state, taubar_p=taubar_p, tau_s=tau_s, taubar_r=taubar_r,
                   clamp_events=state.clamp_events + clamped)


def linearization_update(state: SolverState, theta: float) -> SolverState:
    """Damped refresh of the linearization in inverse-variance space."""
    if not 0.0 <= theta <= 1.0:
        raise ParameterError("theta must lie in [0, 1]")
    if theta == 1.0:
        return replace(state, tau_r=state.taubar_r.copy(), tau_p=state.taubar_p.copy())
    if theta == 0.0:
        return replace(state)
    inv_r = theta / state.taubar_r + (1.0 - theta) / state.tau_r
    inv_p = theta / state.taubar_p + (1.0 - theta) / state.tau_p
    return replace(state, tau_r=1.0 / inv_r, tau_p=1.0 / inv_p)


def fixed_point_residuals(state: SolverState, A) -> FixedPointResiduals:
    """Constraint, dual and variance-matching gaps of ``state``.

    The variance gap compares the linearization in use with the gradient
    terms stored by the latest gradient update.
    """
    Av = A @ state.v
    Ats = A.T @ state.s
    moment = max(_rel(state.z - Av, Av), _rel(state.x - state.v, state.v))
    dual = float(np.linalg.norm(state.q + Ats) / (1.0 + np.linalg.norm(Ats)))
    var = max(float(np.max(np.abs(state.tau_r / state.taubar_r - 1.0))),
              float(np.max(np.abs(state.tau_p / state.taubar_p - 1.0))))
    return FixedPointResiduals(moment, dual, var)


def inner_gaps(state: SolverState, A) -> float:
    """``max(moment_gap, dual_gap)``; the variance gap is not an inner-loop quantity."""
    res = fixed_point_residuals(state, A)
    return max(res.moment_gap, res.dual_gap)


def default_estimators(problem: GlmProblem, mode: str):
    return ScalarEstimator(problem.prior, mode), ScalarEstimator(problem.likelihood, mode)


def _scale(problem: GlmProblem) -> float:
    mean, var = problem.prior.prior_moments(problem.n)
    return float(np.linalg.norm(mean) + np.sqrt(np.sum(var))) or 1.0


def solve(problem: GlmProblem, g_x=None, g_z=None, config: Optional[SolverConfig] = None,
          seed: Optional[int] = None, state: Optional[SolverState] = None) -> RunReport:
    """Run the double-loop schedule until the outer-boundary relative change of
    ``x`` is at most ``term_tol`` (and, if ``gap_tol`` is set, every
    fixed-point gap is below it) or the iteration budget is spent.

    ``iterations_used`` counts inner ADMM steps.  Non-finite values or an
    estimate norm beyond ``divergence_guard`` times the prior scale end the
    run with ``diverged`` set.  When the run fails and ``theta_ladder`` is
    nonempty, it is restarted from scratch with each listed damping value in
    turn.  The first converged run is returned, or else the non-diverged
    attempt with the smallest fixed-point gap.
    """
    config = config or SolverConfig()
    if g_x is None or g_z is None:
        dx, dz = default_estimators(problem, config.mode)
        g_x, g_z = g_x or dx, g_z or dz
    t0 = time.perf_counter()
    rep = _solve_once(problem, g_x, g_z, config, config.theta, state)
    tried = [config.theta]
    attempts = [rep]
    for theta in config.theta_ladder:
        if rep.converged or theta in tried:
            continue
        rep = _solve_once(problem, g_x, g_z, config, theta, state)
        tried.append(theta)
        attempts.append(rep)
    if not rep.converged:
        rep = min(attempts, key=lambda a: (a.diverged, a.residuals.max()))
    rep.seed = seed
    rep.wall_time = time.perf_counter() - t0
    rep.extras["thetas_tried"] = tried
    return rep


def _solve_once(problem, g_x, g_z, config, theta, state=None) -> RunReport:
    A, S = problem.A, problem.S
    state = state if state is not None else initial_state(problem)
    guard = config.divergence_guard * _scale(problem)
    nmse, bfe = [], []
    converged = diverged = False
    x_prev = state.x.copy()
    residuals = None
    outer = 0
    try:
        while True:
            k = 0
            while True:
                state = inner_admm_step(state, g_x, g_z, A, S, config)
                nmse.append(problem.nmse(state.x))
                k += 1
                if np.linalg.norm(state.x) > guard:
                    raise NumericalError("estimate exceeded the divergence guard", state=state)
                if len(nmse) >= config.max_total_iters:
                    break
                if config.inner_tol is None:
                    if k >= config.inner_per_outer:
                        break
                elif inner_gaps(state, A) < config.inner_tol or k >= config.max_inner:
                    break
            if config.record_bfe:
                bfe.append(bfe_value(state.beliefs(), problem.prior, problem.likelihood, S,
                                     config.bfe_nodes))
            state = gradient_update(state, S, config)
            residuals = fixed_point_residuals(state, A)
            state = linearization_update(state, theta)
            outer += 1
            small = _rel(state.x - x_prev, x_prev) <= config.term_tol
            if small and (config.gap_tol is None or residuals.max() < config.gap_tol):
                converged = True
                break
            x_prev = state.x.copy()
            if len(nmse) >= config.max_total_iters or outer >= config.max_outer:
                break
    except NumericalError as err:
        diverged = True
        if err.state is not None:
            state = err.state
        residuals = FixedPointResiduals(np.inf, np.inf, np.inf)
    if residuals is None:
        residuals = fixed_point_residuals(state, A)
    return RunReport(
        x_hat=state.x, z_hat=state.z, tau_x=state.tau_x, tau_z=state.tau_z,
        nmse_trajectory=np.array(nmse), bfe_trajectory=np.array(bfe) if config.record_bfe else None,
        residuals=residuals, converged=converged, iterations_used=len(nmse),
        clamp_events=state.clamp_events, seed=None, wall_time=0.0,
        diverged=diverged, state=state, extras={"outer_iterations": outer, "theta": theta},
    )


def run_inner_to(state: SolverState, g_x, g_z, A, S, config: SolverConfig, tol: float,
                 max_iters: int, trace=None) -> SolverState:
    """Iterate the inner loop at fixed linearization until the gaps are below ``tol``.

    ``trace``, if given, is called with each new state.
    """
    for _ in range(max_iters):
        state = inner_admm_step(state, g_x, g_z, A, S, config)
        if trace is not None:
            trace(state)
        if inner_gaps(state, A) < tol:
            return state
    raise NumericalError(f"inner loop did not reach gap {tol} in {max_iters} steps", state=state)


def map_two_stage_solve(problem: GlmProblem, priors=None, likelihoods=None,
                        config: Optional[SolverConfig] = None, stage1_tol: float = 1e-12,
                        tau_tol: float = 1e-10, drift_tol: float = 1e-9,
                        max_iters: int = 100_000, seed: Optional[int] = None) -> RunReport:
    """MAP estimate followed by the curvature (variance) fixed point.

    Stage 1 runs the inner loop with arbitrary fixed positive linearization
    weights until the mean variables converge.  Stage 2 switches on the MAP
    variance rule with ``theta = 1`` and iterates until ``tau_x`` settles;
    the mean-type variables must not move while it does.
    """
    config = replace(config or SolverConfig(), mode="map", map_variance_rule=True)
    priors = priors if priors is not None else problem.prior
    likelihoods = likelihoods if likelihoods is not None else problem.likelihood
    g_x, g_z = ScalarEstimator(priors, "map"), ScalarEstimator(likelihoods, "map")
    A, S = problem.A, problem.S
    t0 = time.perf_counter()
    nmse = []
    state = run_inner_to(initial_state(problem), g_x, g_z, A, S, config, stage1_tol, max_iters,
                         trace=lambda st: nmse.append(problem.nmse(st.x)))
    stage1 = state.iteration
    anchor = state.means()
    drift = 0.0
    tau_prev = state.tau_x.copy()
    converged = False
    for _ in range(max_iters):
        state = gradient_update(state, S, config)
        state = linearization_update(state, 1.0)
        state = inner_admm_step(state, g_x, g_z, A, S, config)
        nmse.append(problem.nmse(state.x))
        drift = max(drift, float(np.max(np.abs(state.means() - anchor))))
        step = float(np.max(np.abs(state.tau_x - tau_prev)))
        tau_prev = state.tau_x.copy()
        if step < tau_tol:
            converged = True
            break
    if drift > drift_tol:
        raise InvariantViolation(f"mean variables drifted by {drift:.3e} during stage 2")
    state = gradient_update(state, S, config)
    residuals = fixed_point_residuals(state, A)
    return RunReport(
        x_hat=state.x, z_hat=state.z, tau_x=state.tau_x, tau_z=state.tau_z,
        nmse_trajectory=np.array(nmse), bfe_trajectory=None,
        residuals=residuals, converged=converged, iterations_used=len(nmse),
        clamp_events=state.clamp_events, seed=seed, wall_time=time.perf_counter() - t0,
        state=state,
        extras={"stage1_iterations": stage1, "stage2_iterations": state.iteration - stage1,
                "stage2_drift": drift},
    )
