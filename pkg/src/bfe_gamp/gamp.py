"""The original sum-product GAMP recursion, kept as a baseline.

No clamping or damping is applied, so divergence on ill-conditioned matrices
remains observable.  It is reported through ``RunReport.diverged``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .admm import FixedPointResiduals, RunReport, SolverConfig, _rel, _scale, default_estimators
from .problem import GlmProblem


@dataclass
class GampState:
    x: np.ndarray
    tau_x: np.ndarray
    s: np.ndarray
    p: np.ndarray
    tau_p: np.ndarray
    z: np.ndarray
    tau_z: np.ndarray
    tau_s: np.ndarray
    r: np.ndarray
    tau_r: np.ndarray
    iteration: int = 0

    def finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, k)))
                   for k in ("x", "tau_x", "s", "p", "tau_p", "z", "tau_z", "tau_s", "r", "tau_r"))


def initial_gamp_state(problem: GlmProblem) -> GampState:
    """``x`` at the prior mean, ``tau_x`` at the prior variance, ``s = 0``."""
    m, n = problem.m, problem.n
    mean, var = problem.prior.prior_moments(n)
    return GampState(
        x=mean.astype(float), tau_x=var.astype(float), s=np.zeros(m),
        p=np.zeros(m), tau_p=np.ones(m), z=np.zeros(m), tau_z=np.ones(m), tau_s=np.zeros(m),
        r=np.zeros(n), tau_r=np.ones(n),
    )


def gamp_step(state: GampState, g_x, g_z, A, S) -> GampState:
    """One GAMP iteration with the interleaved mean/variance order."""
    with np.errstate(all="ignore"):
        tau_p = S @ state.tau_x
        p = A @ state.x - tau_p * state.s
        z, tau_z = g_z(p, tau_p)
        tau_s = (1.0 - tau_z / tau_p) / tau_p
        s = (z - p) / tau_p
        tau_r = 1.0 / (S.T @ tau_s)
        r = state.x + tau_r * (A.T @ s)
        x, tau_x = g_x(r, tau_r)
    return replace(state, x=x, tau_x=tau_x, s=s, p=p, tau_p=tau_p, z=z, tau_z=tau_z,
                   tau_s=tau_s, r=r, tau_r=tau_r, iteration=state.iteration + 1)


def gamp_residuals(state: GampState, A) -> FixedPointResiduals:
    """Gaps comparable to the ADMM-GAMP ones: ``z`` vs ``A x``, ``x`` vs ``g_x(r)``.

    ``moment_gap`` measures ``||z - A x|| / ||A x||``; the dual gap is zero by
    construction and the variance gap compares ``tau_p`` with ``S tau_x``.
    """
    Ax = A @ state.x
    moment = _rel(state.z - Ax, Ax)
    var = float(np.max(np.abs(state.tau_p / ((A * A) @ state.tau_x) - 1.0)))
    return FixedPointResiduals(moment, 0.0, var)


def gamp_solve(problem: GlmProblem, g_x=None, g_z=None, config: Optional[SolverConfig] = None,
               seed: Optional[int] = None) -> RunReport:
    """Iterate until the relative change of ``x`` is at most ``term_tol``.

    Every iteration counts toward ``max_total_iters``.  Non-finite values or
    ``||x||`` beyond ``divergence_guard`` times the prior scale stop the run
    with ``diverged`` set.
    """
    config = config or SolverConfig()
    if g_x is None or g_z is None:
        dx, dz = default_estimators(problem, config.mode)
        g_x, g_z = g_x or dx, g_z or dz
    A, S = problem.A, problem.S
    t0 = time.perf_counter()
    state = initial_gamp_state(problem)
    guard = config.divergence_guard * _scale(problem)
    nmse = []
    converged = diverged = False
    for _ in range(config.max_total_iters):
        x_prev = state.x
        try:
            state = gamp_step(state, g_x, g_z, A, S)
        except (ArithmeticError, ValueError):
            diverged = True
            break
        if not state.finite() or np.linalg.norm(state.x) > guard:
            diverged = True
            nmse.append(0.0)
            break
        nmse.append(problem.nmse(state.x))
        if _rel(state.x - x_prev, x_prev) <= config.term_tol:
            converged = True
            break
    residuals = (FixedPointResiduals(np.inf, np.inf, np.inf) if diverged
                 else gamp_residuals(state, A))
    return RunReport(
        x_hat=state.x, z_hat=state.z, tau_x=state.tau_x, tau_z=state.tau_z,
        nmse_trajectory=np.array(nmse), bfe_trajectory=None, residuals=residuals,
        converged=converged, iterations_used=len(nmse), clamp_events=0, seed=seed,
        wall_time=time.perf_counter() - t0, diverged=diverged, state=state,
    )
