"""Two-phase linear regression model: designs, error laws and synthetic data.

The observations follow

    Y_i = X_i^t beta   + eps_i,   1 <= i <= k,
    Y_i = X_i^t beta_2 + eps_i,   k <  i <= n,

with a fixed design matrix ``X`` and i.i.d. centred errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InsufficientDataError, UnsupportedLawError

GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"
EMPIRICAL = "empirical"

_LAW_ALIASES = {
    "gaussian": GAUSSIAN,
    "normal": GAUSSIAN,
    "exponential": EXPONENTIAL,
    "exp": EXPONENTIAL,
    "empirical": EMPIRICAL,
}


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Design:
    """Fixed covariate matrix together with the candidate change-point.

    ``k`` is 1-based: observations ``1..k`` (rows ``0..k-1``) form the first
    phase.
    """

    X: np.ndarray
    k: int

    def __post_init__(self):
        X = _readonly(self.X)
        if X.ndim != 2:
            raise DimensionError(f"X must be a 2-d matrix, got shape {X.shape}")
        n, p = X.shape
        if n < 2 or p < 1:
            raise DimensionError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        k = int(self.k)
        if not 1 <= k < n:
            raise DimensionError(f"change-point must satisfy 1 <= k < n, got k={k}, n={n}")
        if not np.all(np.isfinite(X)):
            raise DimensionError("X contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "k", k)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def theta(self) -> float:
        return self.k / self.n

    def with_k(self, k: int) -> "Design":
        """Same covariates, different change-point."""
        return Design(self.X, k)


@dataclass(frozen=True, eq=False)
class ErrorSpec:
    """Error-law descriptor.

    Use the constructors :meth:`gaussian`, :meth:`centered_exponential` and
    :meth:`empirical` rather than the raw fields.
    """

    law: str
    param: float = 1.0
    residuals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        law = _LAW_ALIASES.get(str(self.law).lower())
        if law is None:
            raise UnsupportedLawError(f"unknown error law {self.law!r}")
        object.__setattr__(self, "law", law)
        if law == EMPIRICAL:
            if self.residuals is None:
                raise InsufficientDataError("empirical law needs a residual sample")
            r = _readonly(self.residuals).ravel()
            if r.size < 2:
                raise InsufficientDataError(
                    f"empirical law needs at least 2 residuals, got {r.size}")
            if not np.all(np.isfinite(r)):
                raise DimensionError("residual sample contains non-finite values")
            object.__setattr__(self, "residuals", r)
        else:
            param = float(self.param)
            if not (np.isfinite(param) and param > 0):
                raise ValueError(f"{law} law parameter must be positive, got {self.param!r}")
            object.__setattr__(self, "param", param)
        s2, m4 = error_moments(self)
        if not s2 > 0:
            raise ValueError("error variance must be positive")

    @classmethod
    def gaussian(cls, variance: float = 1.0) -> "ErrorSpec":
        return cls(GAUSSIAN, variance)

    @classmethod
    def centered_exponential(cls, rate: float = 1.0) -> "ErrorSpec":
        """Exp(rate) shifted to mean zero."""
        return cls(EXPONENTIAL, rate)

    @classmethod
    def empirical(cls, residuals) -> "ErrorSpec":
        return cls(EMPIRICAL, residuals=residuals)

    @classmethod
    def from_name(cls, name: str) -> "ErrorSpec":
        """Unit-variance law by name (``gaussian``/``normal``, ``exponential``/``exp``)."""
        law = _LAW_ALIASES.get(str(name).lower())
        if law not in (GAUSSIAN, EXPONENTIAL):
            raise UnsupportedLawError(f"no unit-variance law called {name!r}")
        return cls(law, 1.0)

    @property
    def sigma2(self) -> float:
        return error_moments(self)[0]

    @property
    def fourth_moment(self) -> float:
        return error_moments(self)[1]


@dataclass(frozen=True, eq=False)
class CoefficientPair:
    """Phase-one coefficients ``beta1`` and phase-two coefficients ``beta2``."""

    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        b1 = _readonly(self.beta1).ravel()
        b2 = _readonly(self.beta2).ravel()
        if b1.shape != b2.shape:
            raise DimensionError(f"beta1 has length {b1.size}, beta2 has length {b2.size}")
        if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
            raise DimensionError("coefficients must be finite")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)

    @classmethod
    def no_change(cls, beta) -> "CoefficientPair":
        return cls(beta, beta)

    @property
    def p(self) -> int:
        return self.beta1.size


def sequence_beta(p: int) -> np.ndarray:
    """The coefficient vector (1, 2, ..., p)."""
    return np.arange(1, p + 1, dtype=np.float64)


def design_covariance(m: int) -> np.ndarray:
    """Covariance with entries ``2**-|h-l|`` for the ``m`` random covariates."""
    h = np.arange(m)
    return 2.0 ** (-np.abs(h[:, None] - h[None, :]))


def generate_design(n: int, p: int, k: int, seed) -> Design:
    """Intercept column plus ``p - 1`` correlated Gaussian covariates.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts; the same
    seed always yields the same matrix.
    """
    n, p, k = int(n), int(p), int(k)
    if p < 1 or n < 2:
        raise DimensionError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if not 1 <= k < n:
        raise DimensionError(f"change-point must satisfy 1 <= k < n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    X = np.ones((n, p))
    if p > 1:
        L = np.linalg.cholesky(design_covariance(p - 1))
        X[:, 1:] = rng.standard_normal((n, p - 1)) @ L.T
    return Design(X, k)


def draw_errors(err: ErrorSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    if err.law == GAUSSIAN:
        return np.sqrt(err.param) * rng.standard_normal(size)
    if err.law == EXPONENTIAL:
        return (rng.standard_exponential(size) - 1.0) / err.param
    raise UnsupportedLawError("cannot generate data from an empirical error law")


def generate_response(design: Design, coeffs: CoefficientPair, err: ErrorSpec, seed) -> np.ndarray:
    """Responses of the two-phase model; errors come from ``seed``."""
    if coeffs.p != design.p:
        raise DimensionError(f"design has p={design.p}, coefficients have p={coeffs.p}")
    if err.law == EMPIRICAL:
        raise UnsupportedLawError("cannot generate data from an empirical error law")
    rng = np.random.default_rng(seed)
    eps = draw_errors(err, design.n, rng)
    X, k = design.X, design.k
    mean = np.concatenate([X[:k] @ coeffs.beta1, X[k:] @ coeffs.beta2])
    return mean + eps


def error_moments(err: ErrorSpec) -> tuple[float, float]:
    """``(sigma2, E[eps^4])`` of an error law.

    Closed form for Gaussian and centred exponential laws; raw plug-in
    moments of the residual sample for the empirical law.
    """
    if err.law == GAUSSIAN:
        v = err.param
        return v, 3.0 * v * v
    if err.law == EXPONENTIAL:
        rate = err.param
        return 1.0 / rate**2, 9.0 / rate**4
    r = err.residuals
    if r is None or r.size < 2:
        raise InsufficientDataError("empirical law needs at least 2 residuals")
    r2 = r * r
    return float(np.mean(r2)), float(np.mean(r2 * r2))
