"""Synthetic instances, the support-aware genie and Monte-Carlo sweeps.

Three sweeps are provided:

* ``ratio_sweep``: i.i.d. Gaussian ``A``, grid over ``m/n``, AWGN output.
* ``kappa_sweep_awgn``: spectral ``A`` with fixed ``m``, grid over kappa.
* ``kappa_sweep_onebit``: as above with sign measurements.

Each (grid point, trial) cell draws its own instance from a seed derived
from ``base_seed``, so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .admm import SolverConfig, solve
from .errors import NumericalError, ParameterError
from .estimators import BernoulliGaussian, GaussianOutput, OneBitOutput
from .gamp import gamp_solve
from .linalg import (STREAM_NOISE, STREAM_SIGNAL, SpectralSpec, build_spectral_matrix,
                     derive_seed, gaussian, iid_gaussian_matrix, make_rng)
from .problem import GlmProblem, Truth, nmse_db

EXPERIMENTS = ("ratio_sweep", "kappa_sweep_awgn", "kappa_sweep_onebit")
SOLVERS = ("admm_gamp", "gamp", "genie")
CSV_HEADER = ["experiment", "point", "solver", "trial", "seed", "nmse_db", "iters",
              "diverged", "moment_gap", "dual_gap", "variance_gap", "wall_ms"]

__all__ = ["gen_bg_signal", "gen_awgn_problem", "gen_onebit_problem", "genie_mmse", "nmse_db",
           "SweepConfig", "make_instance", "run_trial", "monte_carlo_sweep", "load_config"]


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_bg_signal(n: int, rho: float, s_x: float, seed: int):
    """Spike-and-slab signal; returns ``(x, support)``."""
    if not 0.0 < rho <= 1.0:
        raise ParameterError("rho must lie in (0, 1]")
    rng = make_rng(seed, STREAM_SIGNAL)
    active = rng.random(n) < rho
    x = np.where(active, np.sqrt(s_x) * gaussian(rng, n), 0.0)
    return x, np.flatnonzero(active)


def gen_awgn_problem(x, A, snr_db: float, seed: int):
    """``y = A x + e`` with noise variance set from the SNR; returns ``(y, noise_var)``."""
    z = np.asarray(A, float) @ np.asarray(x, float)
    power = float(z @ z)
    if power == 0.0:
        raise ParameterError("A x = 0; the SNR is undefined")
    noise_var = power / (len(z) * 10.0 ** (snr_db / 10.0))
    e = np.sqrt(noise_var) * gaussian(make_rng(seed, STREAM_NOISE), len(z))
    return z + e, noise_var


def gen_onebit_problem(x, A):
    """``y = sign(A x)`` with zeros mapped to +1."""
    z = np.asarray(A, float) @ np.asarray(x, float)
    return np.where(z >= 0.0, 1.0, -1.0)


def genie_mmse(A, y, support, s_x: float, noise_var: float):
    """Support-aware linear MMSE estimate.

    Solved in the ``|support|``-dimensional form
    ``(A_S^T A_S + noise_var/s_x I)^{-1} A_S^T y``, which equals
    ``s_x A_S^T (s_x A_S A_S^T + noise_var I)^{-1} y``.
    """
    A = np.asarray(A, float)
    support = np.asarray(support, dtype=int)
    x = np.zeros(A.shape[1])
    if support.size == 0:
        return x
    As = A[:, support]
    G = As.T @ As
    G[np.diag_indices_from(G)] += noise_var / s_x
    try:
        x[support] = sla.solve(G, As.T @ np.asarray(y, float), assume_a="pos")
    except (sla.LinAlgError, ValueError) as err:
        raise NumericalError(f"genie system is singular: {err}") from err
    return x


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class SweepConfig:
    experiment: str = "ratio_sweep"
    n: int = 200
    m: int = 120
    grid: tuple = (0.4, 0.6, 0.8)
    trials: int = 20
    snr_db: float = 30.0
    rho: float = 0.2
    s_x: float = 1.0
    base_seed: int = 0
    solvers: tuple = ("admm_gamp", "gamp", "genie")
    theta: float = 1.0
    inner_per_outer: int = 10
    cg_iters: int = 3
    term_tol: float = 1e-4
    max_iters: int = 200
    admm_max_iters: int = 2000
    theta_ladder: tuple = (0.5, 0.1)
    gap_tol: Optional[float] = 1e-4
    timing: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ParameterError(f"experiment: unknown value {self.experiment!r}")
        if int(self.trials) < 1:
            raise ParameterError("trials: must be >= 1")
        if len(self.grid) == 0:
            raise ParameterError("grid: must be nonempty")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad or not self.solvers:
            raise ParameterError(f"solvers: unknown or empty {bad}")
        if not 0.0 < self.rho <= 1.0:
            raise ParameterError("rho: must lie in (0, 1]")
        if not 0.0 <= self.theta <= 1.0:
            raise ParameterError("theta: must lie in [0, 1]")
        if any(not 0.0 < th <= 1.0 for th in self.theta_ladder):
            raise ParameterError("theta_ladder: entries must lie in (0, 1]")
        for name in ("n", "m", "inner_per_outer", "cg_iters", "max_iters", "admm_max_iters"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name}: must be >= 1")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(theta=self.theta, inner_per_outer=self.inner_per_outer,
                            cg_iters=self.cg_iters, term_tol=self.term_tol,
                            max_total_iters=self.admm_max_iters,
                            theta_ladder=tuple(self.theta_ladder), gap_tol=self.gap_tol)

    def gamp_config(self) -> SolverConfig:
        return SolverConfig(term_tol=self.term_tol, max_total_iters=self.max_iters)


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text, conv):
    items = [t for t in text.replace(",", " ").split() if t]
    return tuple(conv(t) for t in items)


_KEY_TYPES = {
    "experiment": str, "n": int, "m": int, "trials": int, "snr_db": float, "rho": float,
    "s_x": float, "base_seed": int, "theta": float, "inner_per_outer": int, "cg_iters": int,
    "term_tol": float, "max_iters": int, "admm_max_iters": int, "timing": _parse_bool,
    "threads": int,
    "theta_ladder": lambda t: _list(t, float),
    "gap_tol": lambda t: None if t.strip().lower() == "none" else float(t),
    "grid": lambda t: _list(t, float),
    "solvers": lambda t: _list(t, str),
}


class ConfigError(ParameterError):
    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def parse_config(text: str) -> SweepConfig:
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_TYPES:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = _KEY_TYPES[key](val)
        except ValueError as err:
            raise ConfigError(key, str(err)) from err
    try:
        return SweepConfig(**values)
    except ParameterError as err:
        key = str(err).split(":", 1)[0]
        raise ConfigError(key, str(err)) from err


def load_config(path) -> SweepConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

def trial_seed(base_seed: int, point_index: int, trial: int) -> int:
    return derive_seed(base_seed, point_index, trial)


def make_instance(cfg: SweepConfig, point_index: int, trial: int):
    """Build ``(problem, seed, noise_var)`` for one sweep cell."""
    seed = trial_seed(cfg.base_seed, point_index, trial)
    value = float(cfg.grid[point_index])
    n = int(cfg.n)
    if cfg.experiment == "ratio_sweep":
        m = int(round(value * n))
        A = iid_gaussian_matrix(m, n, seed)
    else:
        m = int(cfg.m)
        A = build_spectral_matrix(SpectralSpec(m, n, value, seed))
    x, support = gen_bg_signal(n, cfg.rho, cfg.s_x, seed)
    prior = BernoulliGaussian(rho=cfg.rho, s_x=cfg.s_x)
    truth = Truth(x, support)
    if cfg.experiment == "kappa_sweep_onebit":
        y = gen_onebit_problem(x, A)
        return GlmProblem(A, y, prior, OneBitOutput(y=y), truth, scale_invariant=True), seed, None
    y, noise_var = gen_awgn_problem(x, A, cfg.snr_db, seed)
    return GlmProblem(A, y, prior, GaussianOutput(y=y, noise_var=noise_var), truth), seed, noise_var


def _capped(nmse, diverged):
    if diverged or not np.isfinite(nmse):
        return 0.0
    return min(float(nmse), 0.0)


def run_trial(cfg: SweepConfig, point_index: int, trial: int) -> list[dict]:
    """Run every requested solver on one instance; one row per solver."""
    problem, seed, noise_var = make_instance(cfg, point_index, trial)
    rows = []
    for solver in cfg.solvers:
        if solver == "genie" and noise_var is None:
            continue  # no genie for sign measurements
        t0 = time.perf_counter()
        gaps = (0.0, 0.0, 0.0)
        iters, diverged = 0, False
        try:
            if solver == "admm_gamp":
                rep = solve(problem, config=cfg.solver_config(), seed=seed)
            elif solver == "gamp":
                rep = gamp_solve(problem, config=cfg.gamp_config(), seed=seed)
            else:
                rep = None
                x_hat = genie_mmse(problem.A, problem.y, problem.truth.support, cfg.s_x, noise_var)
            if rep is not None:
                x_hat, iters, diverged = rep.x_hat, rep.iterations_used, rep.diverged
                res = rep.residuals
                gaps = (res.moment_gap, res.dual_gap, res.variance_gap)
            nmse = np.inf if diverged else problem.nmse(x_hat)
        except (ArithmeticError, ValueError):
            diverged, nmse, gaps = True, np.inf, (np.inf, np.inf, np.inf)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
        rows.append({
            "experiment": cfg.experiment, "point": float(cfg.grid[point_index]), "solver": solver,
            "trial": trial, "seed": seed, "nmse_db": _capped(nmse, diverged), "iters": iters,
            "diverged": int(diverged), "moment_gap": gaps[0], "dual_gap": gaps[1],
            "variance_gap": gaps[2], "wall_ms": wall,
        })
    return rows


def _cell(args):
    cfg, i, t = args
    return (i, t), run_trial(cfg, i, t)


def resolve_threads(requested: Optional[int]) -> int:
    env = os.environ.get("BFE_GAMP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("BFE_GAMP_THREADS", f"not an integer: {env!r}") from None
    return max(1, int(requested or 1))


@dataclass
class SweepResult:
    config: SweepConfig
    trials: list = field(default_factory=list)
    summary: list = field(default_factory=list)


def summarize(cfg: SweepConfig, trial_rows: list[dict]) -> list[dict]:
    """One row per (point, solver): mean of capped NMSE and of the other columns."""
    out = []
    keys = []
    for row in trial_rows:
        k = (row["point"], row["solver"])
        if k not in keys:
            keys.append(k)
    for point, solver in keys:
        sel = [r for r in trial_rows if r["point"] == point and r["solver"] == solver]
        out.append({
            "experiment": cfg.experiment, "point": point, "solver": solver, "trial": "mean",
            "seed": cfg.base_seed,
            "nmse_db": float(np.mean([r["nmse_db"] for r in sel])),
            "iters": float(np.mean([r["iters"] for r in sel])),
            "diverged": int(sum(r["diverged"] for r in sel)),
            "moment_gap": float(np.max([r["moment_gap"] for r in sel])),
            "dual_gap": float(np.max([r["dual_gap"] for r in sel])),
            "variance_gap": float(np.max([r["variance_gap"] for r in sel])),
            "wall_ms": float(np.mean([r["wall_ms"] for r in sel])),
        })
    return out


def monte_carlo_sweep(cfg: SweepConfig, threads: Optional[int] = None) -> SweepResult:
    """Run all (point, trial) cells and aggregate; output order is fixed."""
    cells = [(cfg, i, t) for i in range(len(cfg.grid)) for t in range(cfg.trials)]
    workers = resolve_threads(threads if threads is not None else cfg.threads)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_cell, cells))
    else:
        results = dict(map(_cell, cells))
    trial_rows = [row for key in sorted(results) for row in results[key]]
    return SweepResult(cfg, trial_rows, summarize(cfg, trial_rows))


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in CSV_HEADER])
    return buf.getvalue()


def write_sweep(result: SweepResult, out_dir) -> tuple[str, str]:
    """Write ``results.csv`` (per point and solver) and ``trials.csv`` (per trial)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = (os.path.join(out_dir, "results.csv"), os.path.join(out_dir, "trials.csv"))
    for path, rows in zip(paths, (result.summary, result.trials)):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(rows_to_csv(rows))
    return paths


def config_with(cfg: SweepConfig, **updates) -> SweepConfig:
    names = {f.name for f in fields(SweepConfig)}
    return replace(cfg, **{k: v for k, v in updates.items() if k in names and v is not None})
