"""GLM problem instances and the NMSE metric shared by both solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ParameterError
from .estimators import Penalty
from .linalg import elementwise_square

NMSE_FLOOR_DB = -150.0


def nmse_db(x_true, x_hat, normalize: bool = False) -> float:
    """``10 log10(||x - x_hat||^2 / ||x||^2)``, floored at -150 dB.

    With ``normalize`` both vectors are scaled to unit norm first, which
    removes the scale ambiguity of sign measurements.
    """
    x_true = np.asarray(x_true, float)
    x_hat = np.asarray(x_hat, float)
    nt = np.linalg.norm(x_true)
    if nt == 0:
        raise ParameterError("nmse_db needs a nonzero reference vector")
    if normalize:
        x_true = x_true / nt
        nh = np.linalg.norm(x_hat)
        x_hat = x_hat / nh if nh > 0 else x_hat
        nt = 1.0
    err = np.sum((x_true - x_hat) ** 2) / nt ** 2
    if not np.isfinite(err):
        return np.inf
    if err == 0:
        return NMSE_FLOOR_DB
    return float(max(10.0 * np.log10(err), NMSE_FLOOR_DB))


@dataclass(frozen=True)
class Truth:
    x: np.ndarray
    support: np.ndarray


@dataclass(eq=False)
class GlmProblem:
    """``p(x | y) ~ exp(-f_x(x) - f_z(A x))`` with separable penalties.

    ``prior`` and ``likelihood`` are penalty objects whose parameters
    broadcast over the n (resp. m) components.
    """

    A: np.ndarray
    y: np.ndarray
    prior: Penalty
    likelihood: Penalty
    truth: Optional[Truth] = None
    scale_invariant: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.asarray(self.A, float)
        self.y = np.asarray(self.y, float)
        if self.A.ndim != 2 or self.y.shape != (self.A.shape[0],):
            raise ParameterError(f"inconsistent dims: A {self.A.shape}, y {self.y.shape}")
        if not np.all(np.isfinite(self.A)):
            raise ParameterError("A has non-finite entries")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @cached_property
    def S(self) -> np.ndarray:
        return elementwise_square(self.A)

    def nmse(self, x_hat) -> float:
        if self.truth is None:
            return np.nan
        return nmse_db(self.truth.x, x_hat, normalize=self.scale_invariant)
