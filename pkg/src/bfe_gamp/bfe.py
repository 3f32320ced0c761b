"""Large-system-limit Bethe free energy and its variance-gradient terms.

The objective is

    J = sum_j D(b_x_j || e^{-f_x_j}) + sum_i D(b_z_i || e^{-f_z_i}) + H(tau_x, tau_z)
    H = 1/2 sum_i [tau_z_i / (S tau_x)_i + log(2 pi (S tau_x)_i)]

where each belief is a Gaussian-tilted penalty parameterized by ``(r, tau_r)``
or ``(p, tau_p)``.  Values are reported up to a belief-independent additive
constant, so only differences are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCurvatureError, ParameterError, UnsupportedModeError
from .estimators import PRODUCTION_NODES, Penalty

TAU_S_FLOOR = 1e-12


@dataclass(frozen=True)
class BeliefParams:
    r: np.ndarray
    tau_r: np.ndarray
    p: np.ndarray
    tau_p: np.ndarray


@dataclass(frozen=True)
class VarianceState:
    tau_x: np.ndarray
    tau_z: np.ndarray
    taubar_p: np.ndarray
    tau_s: np.ndarray
    taubar_r: np.ndarray
    clamped: int = 0


def entropy_term(tau_x, tau_z, S) -> float:
    """Gaussian entropy surrogate ``H(tau_x, tau_z)``."""
    tau_x, tau_z = np.asarray(tau_x, float), np.asarray(tau_z, float)
    S = np.asarray(S, float)
    tp = S @ tau_x
    if np.any(tp <= 0):
        raise ZeroDivisionError("S tau_x has a non-positive entry")
    return float(0.5 * np.sum(tau_z / tp + np.log(2.0 * np.pi * tp)))


def clamp_tau_s(tau_s) -> tuple[np.ndarray, int]:
    """Floor ``tau_s`` at ``TAU_S_FLOOR`` and count the clamped entries."""
    low = ~(tau_s >= TAU_S_FLOOR)
    return np.where(low, TAU_S_FLOOR, tau_s), int(np.count_nonzero(low))


def taubar_r_from(tau_s, S) -> np.ndarray:
    back = np.asarray(S, float).T @ tau_s
    if not np.all(back > 0):
        raise DegenerateCurvatureError("S^T tau_s is not strictly positive")
    return 1.0 / back


def gradient_terms(tau_x, tau_z, S) -> VarianceState:
    """Variance-gradient terms of ``H``.

    ``dH/dtau_x = -S^T tau_s / 2`` and ``dH/dtau_z = 1 / (2 taubar_p)``; the
    linearization weights are ``taubar_r = 1 / (S^T tau_s)`` and ``taubar_p``.
    """
    tau_x, tau_z = np.asarray(tau_x, float), np.asarray(tau_z, float)
    S = np.asarray(S, float)
    tp = S @ tau_x
    tau_s, clamped = clamp_tau_s((1.0 - tau_z / tp) / tp)
    return VarianceState(tau_x, tau_z, tp, tau_s, taubar_r_from(tau_s, S), clamped)


def _require_smooth(pens):
    for pen in pens:
        if not pen.smooth:
            raise UnsupportedModeError(f"BFE is not defined for {pen.family} beliefs")


def kl_terms(r, tau, pen: Penalty, nodes: int = PRODUCTION_NODES):
    """Componentwise ``D(b || e^{-f})`` and ``var(b)`` for ``b ~ e^{-f - (x-r)^2/(2tau)}``.

    With ``Z`` the normalizer of ``b``, ``E_b[log b + f] = -E_b[(x-r)^2]/(2 tau) - log Z``.
    """
    _require_smooth([pen])
    r, tau = np.asarray(r, float), np.asarray(tau, float)
    logz, mean, var = pen.tilted(r, tau, nodes)
    kl = -(var + (mean - r) ** 2) / (2.0 * tau) - logz
    return kl, var


def bfe_value(beliefs: BeliefParams, priors: Penalty, likelihoods: Penalty, S,
              nodes: int = PRODUCTION_NODES) -> float:
    """``J`` evaluated at the tilted beliefs ``beliefs``."""
    _require_smooth([priors, likelihoods])
    kx, vx = kl_terms(beliefs.r, beliefs.tau_r, priors, nodes)
    kz, vz = kl_terms(beliefs.p, beliefs.tau_p, likelihoods, nodes)
    return float(np.sum(kx) + np.sum(kz) + entropy_term(vx, vz, S))


def linearized_bfe_value(beliefs: BeliefParams, tau_r_lin, tau_p_lin, priors: Penalty,
                         likelihoods: Penalty, nodes: int = PRODUCTION_NODES) -> float:
    """KL terms plus the tangent-plane replacement of ``H``."""
    _require_smooth([priors, likelihoods])
    kx, vx = kl_terms(beliefs.r, beliefs.tau_r, priors, nodes)
    kz, vz = kl_terms(beliefs.p, beliefs.tau_p, likelihoods, nodes)
    lin = np.sum(vx / (2.0 * np.asarray(tau_r_lin, float))) + np.sum(vz / (2.0 * np.asarray(tau_p_lin, float)))
    return float(np.sum(kx) + np.sum(kz) + lin)


def curvature_objective(tau_x, tau_z, x_hat, z_hat, S, priors: Penalty, likelihoods: Penalty) -> float:
    """MAP curvature objective ``J2(tau_x, tau_z)`` with ``tau_p = S tau_x``."""
    tau_x, tau_z = np.asarray(tau_x, float), np.asarray(tau_z, float)
    if np.any(tau_x <= 0) or np.any(tau_z <= 0):
        raise ParameterError("curvature_objective needs positive variances")
    tp = np.asarray(S, float) @ tau_x
    fx = priors.curvature(np.asarray(x_hat, float))
    fz = likelihoods.curvature(np.asarray(z_hat, float))
    jx = np.sum(tau_x * fx - np.log(tau_x))
    jz = np.sum(tau_z * (fz + 1.0 / tp) + np.log(tp / tau_z))
    return float(jx + jz)
