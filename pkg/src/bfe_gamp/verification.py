"""Independent oracles and executable checks of the solver's guarantees.

Each suite builds its own deterministic instances and returns a
``SuiteReport`` whose cases carry the measured value and the threshold it
was compared against.  ``run_suites`` drives them for the ``verify`` CLI.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg as sla

from .admm import (SolverConfig, fixed_point_residuals, initial_state, inner_admm_step,
                   inner_gaps, map_two_stage_solve, solve)
from .errors import ParameterError
from .estimators import (ORACLE_NODES, BernoulliGaussian, GaussianOutput, LogCoshQuadratic,
                         OneBitOutput, Penalty, PureQuadratic, ScalarEstimator, quadrature_mmse,
                         tempered_limit_check)
from .gamp import GampState, gamp_solve, gamp_step
from .linalg import gaussian, iid_gaussian_matrix, make_rng
from .problem import GlmProblem

R_GRID = np.linspace(-4.0, 4.0, 41)
TAU_LIST = (0.01, 0.1, 1.0, 10.0)
T_LIST = (1e-1, 1e-2, 1e-3)
# all-zero gap sequences (exact families) count as decreasing
HARDENING_ZERO = 1e-12


@dataclass
class Case:
    name: str
    measured: float
    threshold: float
    # "le": pass iff measured <= threshold; "lt": strict
    op: str = "le"

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.measured):
            return False
        if self.op == "lt":
            return self.measured < self.threshold
        return self.measured <= self.threshold


@dataclass
class SuiteReport:
    suite: str
    cases: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.cases) and all(c.passed for c in self.cases)

    def add(self, name, measured, threshold, op="le") -> Case:
        case = Case(name, float(measured), float(threshold), op)
        self.cases.append(case)
        return case

    def failures(self) -> list:
        return [c for c in self.cases if not c.passed]

    def rows(self) -> list:
        return [(self.suite, c.name, c.measured, c.threshold, c.passed) for c in self.cases]


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        rep = fn(*args, **kwargs)
        rep.elapsed = time.perf_counter() - t0
        return rep
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def finite_difference_check(g, grid, tau_list, h: float = 1e-5) -> float:
    """Max relative mismatch between a centred difference of ``g`` and ``variance / tau``."""
    if not h > 0:
        raise ParameterError("h must be > 0")
    grid = np.asarray(grid, float)
    worst = 0.0
    for tau in tau_list:
        t = np.full_like(grid, tau)
        fd = (g(grid + h, t).mean - g(grid - h, t).mean) / (2.0 * h)
        slope = g(grid, t).variance / tau
        worst = max(worst, float(np.max(np.abs(fd - slope) / (1e-8 + np.abs(slope)))))
    return worst


def power_iteration_norm(A, iters: int = 500, seed: int = 0) -> float:
    """Estimate ``||A||_2`` by power iteration on ``A^T A``."""
    A = np.asarray(A, float)
    u = gaussian(make_rng(seed, 9), A.shape[1])
    u /= np.linalg.norm(u)
    lam = 0.0
    for _ in range(iters):
        w = A.T @ (A @ u)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:
            return 0.0
        u = w / lam_new
        if abs(lam_new - lam) <= 1e-14 * lam_new:
            break
        lam = lam_new
    return float(np.sqrt(lam_new))


def map_objective(problem: GlmProblem, x, priors=None, likelihoods=None) -> float:
    priors = priors or problem.prior
    likelihoods = likelihoods or problem.likelihood
    return float(np.sum(priors.value(x)) + np.sum(likelihoods.value(problem.A @ x)))


def map_reference_solve(problem: GlmProblem, priors=None, likelihoods=None, tol: float = 1e-12,
                        max_iters: int = 100_000) -> np.ndarray:
    """Minimize ``f_x(x) + f_z(A x)`` by gradient descent with step ``1 / L``.

    ``L = B_z ||A||^2 + B_x`` from the curvature bounds, with ``||A||`` by
    power iteration.  The smooth part is the whole objective, so the
    proximal step is the identity.
    """
    priors = priors or problem.prior
    likelihoods = likelihoods or problem.likelihood
    A = problem.A
    bx = float(np.max(priors.curvature_bounds()[1]))
    bz = float(np.max(likelihoods.curvature_bounds()[1]))
    L = bz * power_iteration_norm(A) ** 2 + bx
    x = np.zeros(problem.n)
    for _ in range(max_iters):
        grad = priors.grad(x) + A.T @ likelihoods.grad(A @ x)
        if np.linalg.norm(grad) <= tol * (1.0 + np.linalg.norm(x)):
            return x
        x = x - grad / L
    raise ParameterError(f"reference MAP solver did not reach tol {tol} in {max_iters} steps")


def contraction_rate_estimate(distances) -> float:
    """Max of ``d[t+1] / d[t]`` over the last half of the sequence."""
    d = np.asarray(distances, float)
    if d.size < 10 or np.any(d <= 0):
        raise ParameterError("need at least 10 positive distances")
    half = d.size // 2
    return float(np.max(d[half + 1:] / d[half:-1]))


def curvature_fixed_point(x_hat, z_hat, S, priors: Penalty, likelihoods: Penalty, tau_x0,
                          tol: float = 1e-14, max_iters: int = 100_000):
    """Iterate ``tau_s = 1/(S tau_x + 1/f_z'')`` and ``tau_x = 1/(S^T tau_s + f_x'')``."""
    fx = priors.curvature(x_hat)
    fz = likelihoods.curvature(z_hat)
    tau_x = np.asarray(tau_x0, float)
    for _ in range(max_iters):
        tau_s = 1.0 / (S @ tau_x + 1.0 / fz)
        new = 1.0 / (S.T @ tau_s + fx)
        if np.max(np.abs(new - tau_x)) <= tol * np.max(np.abs(new)):
            return new, tau_s
        tau_x = new
    raise ParameterError("curvature fixed-point iteration did not settle")


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------

def logcosh_instance(seed: int = 0, n: int = 64, m: int = 48) -> GlmProblem:
    """Logcosh prior and logcosh likelihood centred at noisy measurements."""
    A = iid_gaussian_matrix(m, n, seed)
    rng = make_rng(seed, 5)
    x = gaussian(rng, n)
    y = A @ x + 0.1 * gaussian(rng, m)
    return GlmProblem(A, y, LogCoshQuadratic(alpha=0.5, c=2.0),
                      LogCoshQuadratic(alpha=1.0, c=1.0, center=y), meta={"x": x})


def gaussian_instance(seed: int = 0, n: int = 64, m: int = 32, s_x: float = 1.0,
                      noise_var: float = 0.01) -> GlmProblem:
    A = iid_gaussian_matrix(m, n, seed)
    rng = make_rng(seed, 5)
    x = np.sqrt(s_x) * gaussian(rng, n)
    y = A @ x + np.sqrt(noise_var) * gaussian(rng, m)
    return GlmProblem(A, y, PureQuadratic(alpha=1.0 / s_x), GaussianOutput(y=y, noise_var=noise_var))


def lmmse(problem: GlmProblem) -> np.ndarray:
    """Normal-equation posterior mean for Gaussian prior and Gaussian output."""
    A = problem.A
    alpha = np.broadcast_to(np.asarray(problem.prior.alpha, float), problem.n)
    w = 1.0 / problem.likelihood.noise_var
    M = (A.T * w) @ A + np.diag(alpha)
    return sla.solve(M, A.T @ (w * problem.y) + alpha * problem.prior.center, assume_a="pos")


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _closed_form_cases():
    out = [
        ("pure_quadratic", PureQuadratic(alpha=2.0, center=0.3)),
        ("gaussian_output", GaussianOutput(y=0.7, noise_var=0.5)),
        ("bernoulli_gaussian", BernoulliGaussian(rho=0.2, s_x=1.0)),
        ("onebit_pos", OneBitOutput(y=1.0)),
        ("onebit_neg", OneBitOutput(y=-1.0)),
    ]
    return out


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

@_timed
def suite_estimators() -> SuiteReport:
    """Closed-form estimators against the 61-node quadrature oracle."""
    rep = SuiteReport("estimators")
    for name, pen in _closed_form_cases():
        modes = ("mmse", "map") if pen.smooth else ("mmse",)
        for mode in modes:
            worst = 0.0
            for tau in TAU_LIST:
                t = np.full_like(R_GRID, tau)
                closed = pen.mmse(R_GRID, t) if mode == "mmse" else pen.map(R_GRID, t)
                oracle = quadrature_mmse(pen, R_GRID, t, ORACLE_NODES)
                worst = max(worst, float(np.max(np.abs(closed.mean - oracle.mean))),
                            float(np.max(np.abs(closed.variance - oracle.variance))))
            rep.add(f"{name}/{mode}", worst, 1e-9)
    return rep


def _all_family_estimators():
    pens = [
        ("pure_quadratic", PureQuadratic(alpha=2.0, center=0.3)),
        ("gaussian_output", GaussianOutput(y=0.7, noise_var=0.5)),
        ("logcosh", LogCoshQuadratic(alpha=0.5, c=2.0)),
        ("logcosh_centred", LogCoshQuadratic(alpha=1.0, c=1.0, center=0.4)),
        ("bernoulli_gaussian", BernoulliGaussian(rho=0.2, s_x=1.0)),
        ("onebit", OneBitOutput(y=1.0)),
    ]
    for name, pen in pens:
        for mode in (("mmse", "map") if pen.smooth else ("mmse",)):
            yield f"{name}/{mode}", ScalarEstimator(pen, mode)


@_timed
def suite_derivatives(h: float = 1e-5) -> SuiteReport:
    """Centred differences of ``g`` against the returned ``variance / tau``."""
    rep = SuiteReport("derivatives")
    for name, g in _all_family_estimators():
        rep.add(name, finite_difference_check(g, R_GRID, TAU_LIST, h), 1e-4)
    return rep


@_timed
def suite_slope_bounds() -> SuiteReport:
    """``g'`` of logcosh penalties stays inside ``[1/(1+B tau), 1/(1+A tau)]``."""
    rep = SuiteReport("slope_bounds")
    for label, pen in (("logcosh", LogCoshQuadratic(alpha=0.5, c=2.0)),
                       ("logcosh_centred", LogCoshQuadratic(alpha=1.0, c=1.0, center=0.4))):
        lo_c, hi_c = pen.curvature_bounds()
        for mode in ("mmse", "map"):
            g = ScalarEstimator(pen, mode)
            worst = -np.inf
            for tau in TAU_LIST:
                slope = g(R_GRID, np.full_like(R_GRID, tau)).variance / tau
                lower, upper = 1.0 / (1.0 + hi_c * tau), 1.0 / (1.0 + lo_c * tau)
                # positive excess means a bound is violated
                excess = np.maximum(lower - slope, slope - upper) / upper
                worst = max(worst, float(np.max(excess)))
            rep.add(f"{label}/{mode}/bound_excess", worst, 1e-12)
    return rep


@_timed
def suite_gaussian(seed: int = 0) -> SuiteReport:
    """All-Gaussian problems against the normal-equation solution."""
    rep = SuiteReport("gaussian")
    problem = gaussian_instance(seed)
    ref = lmmse(problem)
    tight = SolverConfig(term_tol=1e-13, max_total_iters=20_000, gap_tol=1e-10)
    rep.add("admm_gamp_mmse_vs_lmmse", _rel(solve(problem, config=tight).x_hat, ref), 1e-6)
    rep.add("gamp_vs_lmmse",
            _rel(gamp_solve(problem, config=replace(tight, max_total_iters=2000)).x_hat, ref), 1e-6)
    two = map_two_stage_solve(problem)
    rep.add("admm_gamp_map_vs_normal_equations", _rel(two.x_hat, ref), 1e-8)
    return rep


def inner_trace(problem: GlmProblem, mode: str, tau: float = 1.0, steps: int = 400,
                v_solver: str = "direct"):
    """Distances ``||(x, z, q, s, v)^t - limit||`` of the inner loop at fixed ``tau``."""
    cfg = SolverConfig(mode=mode, v_solver=v_solver)
    g_x, g_z = ScalarEstimator(problem.prior, mode), ScalarEstimator(problem.likelihood, mode)
    st = initial_state(problem)
    st = replace(st, tau_r=np.full(problem.n, tau), tau_p=np.full(problem.m, tau))
    traj = []
    for _ in range(steps):
        st = inner_admm_step(st, g_x, g_z, problem.A, problem.S, cfg)
        traj.append(st.means())
    limit = traj[-1]
    return np.array([np.linalg.norm(u - limit) for u in traj[:-1]])


def slope_epsilon(problem: GlmProblem, tau: float) -> float:
    """Smallest lower slope bound ``1/(1 + B tau)`` over both penalties."""
    bx = float(np.max(problem.prior.curvature_bounds()[1]))
    bz = float(np.max(problem.likelihood.curvature_bounds()[1]))
    return 1.0 / (1.0 + max(bx, bz) * tau)


def observed_rate(distances, skip: int = 5, floor: float = 1e-10) -> float:
    """Max step ratio past ``skip`` while the distance is above ``floor`` times the first one."""
    d = np.asarray(distances, float)
    d = d[: int(np.argmax(d <= floor * d[0]))] if np.any(d <= floor * d[0]) else d
    ratios = d[skip + 1:] / d[skip:-1]
    return float(np.max(ratios))


@_timed
def suite_contraction(seeds=(0, 1, 2), tau: float = 1.0) -> SuiteReport:
    """Linear convergence of the inner loop at fixed ``tau`` on logcosh instances."""
    rep = SuiteReport("contraction")
    for seed in seeds:
        problem = logcosh_instance(seed)
        bound = 1.0 - slope_epsilon(problem, tau) + 0.05
        for mode in ("map", "mmse"):
            rate = observed_rate(inner_trace(problem, mode, tau))
            rep.add(f"seed{seed}/{mode}/rate", rate, bound)
    return rep


def descent_run(problem: GlmProblem, theta: float = 0.1, outer: int = 25, inner_tol: float = 1e-8):
    cfg = SolverConfig(theta=theta, inner_tol=inner_tol, v_solver="direct", record_bfe=True,
                       term_tol=1e-300, max_outer=outer, max_total_iters=10 ** 7)
    return solve(problem, config=cfg)


def bfe_monotonicity_audit(run, slack: float = 1e-9, name: str = "bfe") -> SuiteReport:
    """Largest increase between consecutive BFE values; fails above ``slack``."""
    if run.bfe_trajectory is None or len(run.bfe_trajectory) < 2:
        raise ParameterError("run has no BFE trajectory")
    traj = np.asarray(run.bfe_trajectory, float)
    diffs = np.diff(traj)
    rep = SuiteReport("descent")
    worst = int(np.argmax(diffs))
    rep.add(f"{name}/max_increase@outer{worst + 1}", float(diffs[worst]), slack)
    return rep


@_timed
def suite_descent(seeds=(0, 1), outer: int = 25) -> SuiteReport:
    """BFE non-increase over the outer iterations with ``theta = 0.1``."""
    rep = SuiteReport("descent")
    for seed in seeds:
        run = descent_run(logcosh_instance(seed), outer=outer)
        rep.add(f"seed{seed}/outer_iterations", -len(run.bfe_trajectory), -20)
        rep.cases.extend(bfe_monotonicity_audit(run, name=f"seed{seed}").cases)
    return rep


def gamp_coincidence_drift(problem: GlmProblem, run) -> float:
    """Move of ``(x, z)`` under one GAMP step started at an ADMM-GAMP fixed point."""
    st = run.state
    g_x, g_z = ScalarEstimator(problem.prior, "mmse"), ScalarEstimator(problem.likelihood, "mmse")
    gs = GampState(x=st.x, tau_x=st.tau_x, s=st.s, p=st.p, tau_p=st.tau_p, z=st.z,
                   tau_z=st.tau_z, tau_s=st.tau_s, r=st.r, tau_r=st.tau_r)
    nxt = gamp_step(gs, g_x, g_z, problem.A, problem.S)
    return max(float(np.max(np.abs(nxt.x - st.x))), float(np.max(np.abs(nxt.z - st.z))))


@_timed
def suite_fixed_points(seed: int = 0) -> SuiteReport:
    """Converged runs sit at a fixed point and GAMP leaves it unchanged."""
    rep = SuiteReport("fixed_points")
    cfg = SolverConfig(theta=0.5, term_tol=1e-13, gap_tol=1e-11, max_total_iters=50_000)
    for label, problem in (("logcosh", logcosh_instance(seed)), ("gaussian", gaussian_instance(seed))):
        run = solve(problem, config=cfg)
        rep.add(f"{label}/converged", 0.0 if run.converged else 1.0, 0.0)
        res = run.residuals
        rep.add(f"{label}/moment_gap", res.moment_gap, 1e-6, "lt")
        rep.add(f"{label}/dual_gap", res.dual_gap, 1e-6, "lt")
        rep.add(f"{label}/variance_gap", res.variance_gap, 1e-6, "lt")
        rep.add(f"{label}/gamp_coincidence_drift", gamp_coincidence_drift(problem, run), 1e-8, "lt")
    return rep


def curvature_fixed_point_audit(run, problem: GlmProblem, priors=None, likelihoods=None,
                                seed: int = 0) -> SuiteReport:
    """Variance fixed-point residuals of a two-stage MAP run and a restart probe."""
    priors = priors or problem.prior
    likelihoods = likelihoods or problem.likelihood
    st = run.state
    S = problem.S
    fx, fz = priors.curvature(st.x), likelihoods.curvature(st.z)
    rhs_x = S.T @ st.tau_s + fx
    rhs_s = S @ st.tau_x + 1.0 / fz
    rep = SuiteReport("curvature")
    rep.add("residual_tau_x", float(np.max(np.abs(1.0 / st.tau_x - rhs_x) / rhs_x)), 1e-8, "lt")
    rep.add("residual_tau_s", float(np.max(np.abs(1.0 / st.tau_s - rhs_s) / rhs_s)), 1e-8, "lt")
    tau0 = np.exp(gaussian(make_rng(seed, 11), problem.n))
    tau_restart, _ = curvature_fixed_point(st.x, st.z, S, priors, likelihoods, tau0)
    rep.add("restart_agreement", float(np.max(np.abs(tau_restart - st.tau_x) / st.tau_x)), 1e-6)
    return rep


@_timed
def suite_curvature(seed: int = 0) -> SuiteReport:
    """Two-stage MAP: curvature fixed point, uniqueness and mean constancy."""
    rep = SuiteReport("curvature")
    for label, problem in (("logcosh", logcosh_instance(seed)), ("gaussian", gaussian_instance(seed))):
        run = map_two_stage_solve(problem)
        for c in curvature_fixed_point_audit(run, problem, seed=seed).cases:
            rep.cases.append(replace(c, name=f"{label}/{c.name}"))
        rep.add(f"{label}/stage2_drift", run.extras["stage2_drift"], 1e-9, "lt")
        if isinstance(problem.prior, LogCoshQuadratic):
            ref = map_reference_solve(problem)
            rep.add(f"{label}/x_vs_reference", float(np.max(np.abs(run.x_hat - ref))), 1e-6)
    return rep


def hardening_audit(specs, grid=R_GRID, tau_list=TAU_LIST, T_list=T_LIST,
                    final_tol: float = 1e-3) -> SuiteReport:
    """Tempered-MMSE to MAP gaps must fall strictly along ``T_list`` at every ``(r, tau)``."""
    rep = SuiteReport("hardening")
    for name, spec in specs:
        violations, finals = 0, []
        for tau in tau_list:
            for r in np.asarray(grid, float):
                gaps = tempered_limit_check(spec, np.array([r]), np.array([tau]), T_list)
                finals.append(gaps[-1])
                exact = np.all(gaps < HARDENING_ZERO)
                if not exact and not np.all(np.diff(gaps) < 0):
                    violations += 1
        rep.add(f"{name}/non_decreasing_points", violations, 0)
        rep.add(f"{name}/final_gap", max(finals), final_tol, "lt")
    return rep


@_timed
def suite_hardening() -> SuiteReport:
    specs = [("pure_quadratic", PureQuadratic(alpha=2.0, center=0.3)),
             ("logcosh", LogCoshQuadratic(alpha=0.5, c=2.0)),
             ("logcosh_centred", LogCoshQuadratic(alpha=1.0, c=1.0, center=0.4))]
    return hardening_audit(specs)


SUITES: dict[str, Callable[[], SuiteReport]] = {
    "estimators": suite_estimators,
    "derivatives": suite_derivatives,
    "slope_bounds": suite_slope_bounds,
    "gaussian": suite_gaussian,
    "contraction": suite_contraction,
    "descent": suite_descent,
    "fixed_points": suite_fixed_points,
    "curvature": suite_curvature,
    "hardening": suite_hardening,
}


def run_suites(names: Optional[list] = None) -> list:
    names = list(SUITES) if not names else names
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ParameterError(f"unknown suite(s): {', '.join(unknown)}")
    return [SUITES[n]() for n in names]
