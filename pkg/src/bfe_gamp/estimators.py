"""Scalar estimation functions for separable penalties.

Every penalty family describes a scalar term ``f(x)/T`` of the negative log
posterior.  Two estimation modes are exposed for a Gaussian pseudo-observation
``r`` with variance ``tau``:

* MMSE: mean and variance of ``b(x) ~ exp(-f(x)/T - (x - r)**2 / (2 tau))``.
* MAP: the proximal point ``argmin f(x)/T + (x - r)**2 / (2 tau)`` together
  with the curvature-based variance ``tau / (1 + tau f''(x)/T)``.

In both modes the returned variance equals ``tau * dg/dr``.

Parameters of a family may be scalars or arrays that broadcast against ``r``,
so a single object describes the whole prior (or likelihood) vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import ClassVar, NamedTuple

import numpy as np
from scipy import special

from .errors import NumericalError, ParameterError, UnsupportedModeError

VARIANCE_FLOOR = 1e-14
DEFAULT_NODES = 31
ORACLE_NODES = 61
# Order used when quadrature is the production route (log-cosh MMSE, BFE).
# Laplace-centred Gauss-Hermite at this order is accurate to about 1e-12 for
# the supported curvature ranges; 31 or 61 nodes are not (see README).
PRODUCTION_NODES = 201

_SQRT2 = np.sqrt(2.0)
_LOG2 = np.log(2.0)


class EstimatorOutput(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _logcosh(u):
    a = np.abs(u)
    return a + np.log1p(np.exp(-2.0 * a)) - _LOG2


def _sech2(u):
    e = np.exp(-2.0 * np.abs(u))
    return 4.0 * e / (1.0 + e) ** 2


# ---------------------------------------------------------------------------
# penalty families
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Penalty:
    """Base class.  Subclasses define the untempered terms ``_f, _df, _d2f``."""

    temperature: float = 1.0

    family: ClassVar[str] = "abstract"
    smooth: ClassVar[bool] = True

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ParameterError("temperature must be > 0")

    # parameters broadcast against x, optionally with a trailing node axis
    def _param(self, name, nodes_axis=False):
        v = _arr(getattr(self, name))
        return v[..., None] if (nodes_axis and v.ndim) else v

    def tempered(self, T: float) -> "Penalty":
        """The same penalty at temperature ``T``."""
        return replace(self, temperature=float(T))

    def value(self, x, nodes_axis=False):
        return self._f(_arr(x), nodes_axis) / self.temperature

    def grad(self, x, nodes_axis=False):
        return self._df(_arr(x), nodes_axis) / self.temperature

    def curvature(self, x, nodes_axis=False):
        return self._d2f(_arr(x), nodes_axis) / self.temperature

    def curvature_bounds(self):
        """Bounds ``(A, B)`` on f'' (untempered), if the family has them."""
        raise UnsupportedModeError(f"{self.family} has no curvature bounds")

    # estimation routes; closed forms override these
    def mmse(self, r, tau) -> EstimatorOutput:
        logz, mean, var = self.tilted(r, tau, PRODUCTION_NODES)
        return EstimatorOutput(mean, var)

    def map(self, r, tau) -> EstimatorOutput:
        return _newton_prox(self, r, tau)

    def tilted(self, r, tau, nodes):
        """``(log Z, mean, variance)`` of the tilted belief by quadrature."""
        return _laplace_gauss_hermite(self, r, tau, nodes)

    def prior_moments(self, size):
        """Mean and variance vectors of the density ``exp(-f)``."""
        _, mean, var = self.tilted(np.zeros(size), np.full(size, 1e12), PRODUCTION_NODES)
        return np.broadcast_to(mean, size).copy(), np.broadcast_to(var, size).copy()


@dataclass(frozen=True, eq=False)
class PureQuadratic(Penalty):
    """``f(x) = alpha (x - center)**2 / 2``."""

    alpha: object = 1.0
    center: object = 0.0
    family: ClassVar[str] = "pure_quadratic"

    def __post_init__(self):
        super().__post_init__()
        if np.any(_arr(self.alpha) <= 0):
            raise ParameterError("pure_quadratic needs alpha > 0")

    def _f(self, x, ax):
        return 0.5 * self._param("alpha", ax) * (x - self._param("center", ax)) ** 2

    def _df(self, x, ax):
        return self._param("alpha", ax) * (x - self._param("center", ax))

    def _d2f(self, x, ax):
        return self._param("alpha", ax) * np.ones_like(x)

    def curvature_bounds(self):
        a = _arr(self.alpha)
        return a, a

    def _closed(self, r, tau):
        r, tau = _arr(r), _arr(tau)
        a = _arr(self.alpha) / self.temperature
        c = _arr(self.center)
        prec = 1.0 / tau + a
        mean = (r / tau + a * c) / prec
        return EstimatorOutput(mean, 1.0 / prec)

    def mmse(self, r, tau):
        return self._closed(r, tau)

    def map(self, r, tau):
        return self._closed(r, tau)

    def prior_moments(self, size):
        mean = np.broadcast_to(_arr(self.center), size).copy()
        var = np.broadcast_to(self.temperature / _arr(self.alpha), size).copy()
        return mean, var


@dataclass(frozen=True, eq=False)
class GaussianOutput(Penalty):
    """AWGN likelihood ``f(z) = (y - z)**2 / (2 noise_var)``."""

    y: object = 0.0
    noise_var: object = 1.0
    family: ClassVar[str] = "gaussian_output"

    def __post_init__(self):
        super().__post_init__()
        if np.any(_arr(self.noise_var) < 0):
            raise ParameterError("gaussian_output needs noise_var >= 0")

    def _f(self, x, ax):
        return 0.5 * (x - self._param("y", ax)) ** 2 / self._param("noise_var", ax)

    def _df(self, x, ax):
        return (x - self._param("y", ax)) / self._param("noise_var", ax)

    def _d2f(self, x, ax):
        return np.ones_like(x) / self._param("noise_var", ax)

    def curvature_bounds(self):
        b = 1.0 / _arr(self.noise_var)
        return b, b

    def _closed(self, p, tau_p):
        return awgn_mmse_output(p, tau_p, self.y, _arr(self.noise_var) * self.temperature)

    def mmse(self, r, tau):
        return self._closed(r, tau)

    def map(self, r, tau):
        return self._closed(r, tau)


@dataclass(frozen=True, eq=False)
class LogCoshQuadratic(Penalty):
    """``f(x) = alpha u**2 / 2 + log cosh(c u)`` with ``u = x - center``.

    Strictly convex with ``alpha <= f'' <= alpha + c**2``.
    """

    alpha: object = 0.5
    c: object = 1.0
    center: object = 0.0
    family: ClassVar[str] = "logcosh_quadratic"

    def __post_init__(self):
        super().__post_init__()
        if np.any(_arr(self.alpha) <= 0) or np.any(_arr(self.c) < 0):
            raise ParameterError("logcosh_quadratic needs alpha > 0 and c >= 0")

    def _u(self, x, ax):
        return x - self._param("center", ax)

    def _f(self, x, ax):
        u, c = self._u(x, ax), self._param("c", ax)
        return 0.5 * self._param("alpha", ax) * u * u + _logcosh(c * u)

    def _df(self, x, ax):
        u, c = self._u(x, ax), self._param("c", ax)
        return self._param("alpha", ax) * u + c * np.tanh(c * u)

    def _d2f(self, x, ax):
        u, c = self._u(x, ax), self._param("c", ax)
        return self._param("alpha", ax) + c * c * _sech2(c * u)

    def curvature_bounds(self):
        a, c = _arr(self.alpha), _arr(self.c)
        return a, a + c * c

    def prior_moments(self, size):
        _, _, var = self.tilted(np.broadcast_to(_arr(self.center), size),
                                np.full(size, 1e12), PRODUCTION_NODES)
        return np.broadcast_to(_arr(self.center), size).copy(), np.broadcast_to(var, size).copy()


@dataclass(frozen=True, eq=False)
class BernoulliGaussian(Penalty):
    """Spike-and-slab prior ``(1 - rho) delta(x) + rho N(x; 0, s_x)``.

    MMSE mode only and temperature 1 only.
    """

    rho: object = 0.2
    s_x: object = 1.0
    family: ClassVar[str] = "bernoulli_gaussian"
    smooth: ClassVar[bool] = False

    def __post_init__(self):
        super().__post_init__()
        rho = _arr(self.rho)
        if np.any(rho <= 0) or np.any(rho > 1):
            raise ParameterError("bernoulli_gaussian needs rho in (0, 1]")
        if np.any(_arr(self.s_x) <= 0):
            raise ParameterError("bernoulli_gaussian needs s_x > 0")
        if self.temperature != 1.0:
            raise UnsupportedModeError("bernoulli_gaussian is defined at T = 1 only")

    def mmse(self, r, tau):
        return bg_mmse_denoise(r, tau, self.rho, self.s_x)

    def map(self, r, tau):
        raise UnsupportedModeError("bernoulli_gaussian has a Dirac spike; MAP is undefined")

    def tilted(self, r, tau, nodes):
        """Spike and slab handled separately: the slab by Gauss-Hermite."""
        r, tau = np.broadcast_arrays(_arr(r), _arr(tau))
        s_x = np.broadcast_to(_arr(self.s_x), r.shape)
        rho = np.broadcast_to(_arr(self.rho), r.shape)
        slab = PureQuadratic(alpha=1.0 / s_x)
        lz_slab, m_slab, v_slab = _laplace_gauss_hermite(slab, r, tau, nodes)
        with np.errstate(divide="ignore"):
            l_spike = np.log1p(-rho) - r * r / (2.0 * tau)
        l_slab = np.log(rho) + lz_slab - 0.5 * np.log(2.0 * np.pi * s_x)
        pi = special.expit(l_slab - l_spike)
        mean = pi * m_slab
        var = pi * v_slab + pi * (1.0 - pi) * m_slab ** 2
        return np.logaddexp(l_spike, l_slab), mean, var

    def prior_moments(self, size):
        var = np.broadcast_to(_arr(self.rho) * _arr(self.s_x), size).copy()
        return np.zeros(size), var


@dataclass(frozen=True, eq=False)
class OneBitOutput(Penalty):
    """Noiseless sign likelihood: ``f(z) = 0`` if ``y z > 0`` else infinity."""

    y: object = 1.0
    family: ClassVar[str] = "one_bit_output"
    smooth: ClassVar[bool] = False

    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isin(_arr(self.y), (-1.0, 1.0))):
            raise ParameterError("one_bit_output needs y in {-1, +1}")

    def mmse(self, r, tau):
        return onebit_mmse_output(r, tau, self.y)

    def map(self, r, tau):
        raise UnsupportedModeError("one_bit_output is an indicator; MAP prox is not supported")

    def tilted(self, r, tau, nodes):
        return _onebit_gauss_legendre(r, tau, self.y, nodes)


FAMILIES = {
    cls.family: cls
    for cls in (PureQuadratic, GaussianOutput, LogCoshQuadratic, BernoulliGaussian, OneBitOutput)
}


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def bg_mmse_denoise(r, tau, rho, s_x) -> EstimatorOutput:
    """Posterior mean/variance under the spike-and-slab prior.

    The slab responsibility is computed from a log-likelihood ratio, so large
    ``|r| / sqrt(tau)`` cannot overflow.
    """
    r, tau = _arr(r), _arr(tau)
    rho, s_x = _arr(rho), _arr(s_x)
    if np.any(tau <= 0):
        raise ParameterError("tau must be > 0")
    tot = tau + s_x
    with np.errstate(divide="ignore"):
        log_odds = (np.log(rho) - np.log1p(-rho) + 0.5 * np.log(tau / tot)
                    + 0.5 * r * r * (1.0 / tau - 1.0 / tot))
    pi = special.expit(log_odds)
    m = r * s_x / tot
    v = s_x * tau / tot
    return EstimatorOutput(pi * m, pi * v + pi * (1.0 - pi) * m * m)


def awgn_mmse_output(p, tau_p, y, noise_var) -> EstimatorOutput:
    """Posterior of ``z`` given ``z ~ N(p, tau_p)`` and ``y = z + N(0, noise_var)``."""
    p, tau_p, y, nv = _arr(p), _arr(tau_p), _arr(y), _arr(noise_var)
    tot = nv + tau_p
    return EstimatorOutput((p * nv + y * tau_p) / tot, tau_p * nv / tot)


# Coefficients (2k-1)!! of the asymptotic series 1 - u R(u), R the Mills ratio.
_MILLS_TERMS = np.array([1.0, 3.0, 15.0, 105.0, 945.0, 10395.0, 135135.0, 2027025.0])
_MILLS_SWITCH = 30.0


def onebit_mmse_output(p, tau_p, y) -> EstimatorOutput:
    """Moments of ``N(p, tau_p)`` truncated to ``y z > 0``.

    With ``a = y p / sqrt(tau_p)`` and ``lam = phi(a) / Phi(a)`` computed as
    ``sqrt(2/pi) / erfcx(-a / sqrt 2)``.  Deep in the excluded tail
    (``a < -30``) an asymptotic series of the Mills ratio replaces the
    cancelling difference ``lam + a``.
    """
    p, tau_p, y = _arr(p), _arr(tau_p), _arr(y)
    s = np.sqrt(tau_p)
    a = y * p / s
    lam = np.sqrt(2.0 / np.pi) / special.erfcx(-a / _SQRT2)
    mean = p + y * s * lam
    vfac = 1.0 - lam * (lam + a)
    tail = -a > _MILLS_SWITCH
    if np.any(tail):
        u = np.where(tail, -a, _MILLS_SWITCH + 1.0)
        inv = 1.0 / (u * u)
        k = np.arange(1, len(_MILLS_TERMS) + 1)
        d = np.sum(((-1.0) ** (k + 1)) * _MILLS_TERMS * inv[..., None] ** k, axis=-1)
        R = (1.0 - d) / u
        mean = np.where(tail, y * s * d / R, mean)  # y s (lam + a), cancellation-free
        vfac = np.where(tail, 1.0 - d / (R * R), vfac)
    return EstimatorOutput(mean, tau_p * vfac)


# ---------------------------------------------------------------------------
# MAP prox
# ---------------------------------------------------------------------------

def _newton_prox(pen: Penalty, r, tau, max_iter: int = 100) -> EstimatorOutput:
    """Safeguarded Newton on ``h'(x) = f'(x)/T + (x - r)/tau``.

    For convex f the root lies between ``r`` and ``r - tau f'(r)/T``, which
    gives an initial bracket; the bracket is grown geometrically if a
    family ever violates that.
    """
    if not pen.smooth:
        raise UnsupportedModeError(f"{pen.family} has no smooth MAP prox")
    r, tau = np.broadcast_arrays(_arr(r), _arr(tau))
    if np.any(tau <= 0):
        raise ParameterError("tau must be > 0")
    shape = np.broadcast_shapes(r.shape, np.shape(pen.grad(r)))
    r = np.broadcast_to(r, shape).astype(float)
    tau = np.broadcast_to(tau, shape).astype(float)

    def hp(x):
        return pen.grad(x) + (x - r) / tau

    step0 = tau * pen.grad(r)
    lo = np.minimum(r, r - step0)
    hi = np.maximum(r, r - step0)
    width = np.maximum(hi - lo, 1.0)
    for _ in range(60):
        bad_lo, bad_hi = hp(lo) > 0, hp(hi) < 0
        if not (np.any(bad_lo) or np.any(bad_hi)):
            break
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
        width = 2.0 * width
    tol = 1e-12 * (1.0 + np.abs(r) / tau)
    x = np.clip(r - step0 / (1.0 + tau * pen.curvature(r)), lo, hi)
    dx_prev = hi - lo
    for _ in range(max_iter):
        g = hp(x)
        done = (np.abs(g) <= tol) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x)))
        if np.all(done):
            break
        hi = np.where(g > 0, x, hi)
        lo = np.where(g < 0, x, lo)
        newton = x - g / (pen.curvature(x) + 1.0 / tau)
        # bisect when Newton leaves the bracket or fails to halve the step
        ok = (newton > lo) & (newton < hi) & (np.abs(newton - x) <= 0.5 * np.abs(dx_prev))
        x_new = np.where(ok, newton, 0.5 * (lo + hi))
        dx_prev = np.where(done, dx_prev, x_new - x)
        x = np.where(done, x, x_new)
    else:
        raise NumericalError(f"{pen.family} prox: Newton did not converge in {max_iter} iterations")
    # one polishing Newton step restores full precision after bisection
    x = np.clip(x - hp(x) / (pen.curvature(x) + 1.0 / tau), lo, hi)
    var = tau / (1.0 + tau * pen.curvature(x))
    return EstimatorOutput(x, var)


def map_prox(spec: Penalty, r, tau) -> EstimatorOutput:
    """MAP estimation function: proximal point and curvature variance."""
    return spec.map(r, tau)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}
_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _hermgauss(n):
    if n not in _GH_CACHE:
        t, w = special.roots_hermite(n)
        keep = w > 0  # outermost weights underflow at high order
        _GH_CACHE[n] = (t[keep], np.log(w[keep]) + t[keep] ** 2)
    return _GH_CACHE[n]


def _leggauss(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _laplace_gauss_hermite(pen: Penalty, r, tau, nodes):
    """Gauss-Hermite moments of ``exp(-f/T - (x - r)**2 / (2 tau))``.

    The rule is centred at the mode of the integrand and scaled by its
    curvature there (a Laplace recentring), which keeps the node set inside
    the bulk of the belief at every temperature.
    """
    if not pen.smooth:
        raise UnsupportedModeError(f"{pen.family} is not a smooth penalty")
    if nodes < 2:
        raise ParameterError("quadrature needs at least 2 nodes")
    r, tau = np.broadcast_arrays(_arr(r), _arr(tau))
    if np.any(tau <= 0):
        raise ParameterError("tau must be > 0")
    mode, lap_var = _newton_prox(pen, r, tau)
    r = np.broadcast_to(r, mode.shape)
    tau = np.broadcast_to(tau, mode.shape)
    t, logw = _hermgauss(int(nodes))
    scale = _SQRT2 * np.sqrt(lap_var)
    dev = scale[..., None] * t
    x = mode[..., None] + dev
    h0 = pen.value(mode) + (mode - r) ** 2 / (2.0 * tau)
    h = pen.value(x, nodes_axis=True) + (x - r[..., None]) ** 2 / (2.0 * tau[..., None])
    lw = logw - (h - h0[..., None])
    if not np.all(np.isfinite(lw.max(axis=-1))):
        raise NumericalError(f"{pen.family}: non-integrable tilted belief")
    top = lw.max(axis=-1, keepdims=True)
    e = np.exp(lw - top)
    z = e.sum(axis=-1)
    shift = (e * dev).sum(axis=-1) / z
    var = (e * (dev - shift[..., None]) ** 2).sum(axis=-1) / z
    logz = np.log(scale) - h0 + top[..., 0] + np.log(z)
    return logz, mode + shift, var


def _onebit_gauss_legendre(p, tau, y, nodes, panels: int = 16):
    """Composite Gauss-Legendre moments of ``N(p, tau)`` restricted to ``y z > 0``.

    Works in ``u = y z`` on ``[0, inf)``.  The integration window covers the
    Gaussian bulk when it lies inside the half-line, and the exponential
    boundary layer of width ``tau / |p|`` otherwise.
    """
    p, tau, y = np.broadcast_arrays(_arr(p), _arr(tau), _arr(y))
    q = y * p
    s = np.sqrt(tau)
    with np.errstate(divide="ignore"):
        layer = np.where(q < 0, np.minimum(s, tau / np.abs(q)), s)
    lo = np.where(q > 0, np.maximum(0.0, q - 14.0 * s), 0.0)
    hi = np.where(q > 0, q + 14.0 * s, 40.0 * layer)
    t, w = _leggauss(int(nodes))
    edges = lo[..., None] + (hi - lo)[..., None] * np.linspace(0.0, 1.0, panels + 1)
    a, b = edges[..., :-1, None], edges[..., 1:, None]
    u = 0.5 * (a + b) + 0.5 * (b - a) * t
    ww = 0.5 * (b - a) * w
    expo = -((u - q[..., None, None]) ** 2) / (2.0 * tau[..., None, None])
    top = expo.max(axis=(-2, -1), keepdims=True)
    k = ww * np.exp(expo - top)
    z = k.sum(axis=(-2, -1))
    mu = (k * u).sum(axis=(-2, -1)) / z
    var = (k * (u - mu[..., None, None]) ** 2).sum(axis=(-2, -1)) / z
    logz = top[..., 0, 0] + np.log(z)
    return logz, y * mu, var


def quadrature_mmse(spec: Penalty, r, tau, nodes: int = DEFAULT_NODES) -> EstimatorOutput:
    """MMSE moments by numerical integration, independent of any closed form.

    Smooth families use Laplace-centred Gauss-Hermite, the spike-and-slab
    prior integrates the slab that way and adds the spike exactly, and the
    one-bit channel uses composite Gauss-Legendre on its half-line.
    ``nodes`` is the order of the underlying rule.
    """
    _, mean, var = spec.tilted(r, tau, nodes)
    return EstimatorOutput(mean, var)


def tempered_limit_check(spec: Penalty, r, tau, T_list, nodes: int = PRODUCTION_NODES) -> np.ndarray:
    """Gaps ``|MMSE(f/T, tau T).mean - MAP(f, tau).mean|`` along ``T_list``."""
    T_list = np.asarray(T_list, dtype=float)
    if np.any(T_list <= 0) or np.any(np.diff(T_list) >= 0):
        raise ParameterError("T_list must be positive and strictly decreasing")
    target = spec.map(r, tau).mean
    gaps = []
    for T in T_list:
        mean = quadrature_mmse(spec.tempered(T * spec.temperature), r, _arr(tau) * T, nodes).mean
        gaps.append(np.max(np.abs(mean - target)))
    return np.array(gaps)


# ---------------------------------------------------------------------------
# estimator objects
# ---------------------------------------------------------------------------

class ScalarEstimator:
    """Componentwise ``(g, tau g')`` map for one penalty in one mode.

    Returned variances are floored at ``VARIANCE_FLOOR``.
    """

    def __init__(self, penalty: Penalty, mode: str = "mmse"):
        if mode not in ("mmse", "map"):
            raise ParameterError(f"unknown estimation mode {mode!r}")
        if mode == "map" and not penalty.smooth:
            raise UnsupportedModeError(f"{penalty.family} has no MAP mode")
        self.penalty = penalty
        self.mode = mode

    def __call__(self, r, tau) -> EstimatorOutput:
        out = self.penalty.mmse(r, tau) if self.mode == "mmse" else self.penalty.map(r, tau)
        return EstimatorOutput(out.mean, np.maximum(out.variance, VARIANCE_FLOOR))

    def __repr__(self):
        return f"ScalarEstimator({self.penalty.family}, mode={self.mode!r})"
