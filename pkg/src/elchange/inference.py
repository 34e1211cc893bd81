"""The change test at a known index: statistic, decision, confidence region."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .elcore import (
    CONVENTIONS,
    PROOF_CONSISTENT,
    PreparedDesign,
    kurtosis,
    psi_n,
    quadratic_form,
    scores_from_residuals,
)
from .errors import DimensionError, InsufficientDataError, SingularDesignError
from .model import Design

NORMAL_QUANTILE = "normal_quantile"
# first-segment residuals this small relative to the response are round-off
NOISELESS_RTOL = 1e-12


@dataclass(frozen=True)
class AssumptionReport:
    """Finite-sample values of the rate conditions; each should be small."""

    q: float
    a5_first: float
    a5_second: float
    a6_first: float
    a6_second: float
    p_cubed_over_n: float
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.warnings


def check_assumptions(n: int, k: int, p: int, q: float = 4) -> AssumptionReport:
    """Evaluate the dimension/sample-size ratios that must vanish asymptotically.

    Every ratio ``>= 1`` adds a warning; so does ``p**3 / n >= 1`` (normality
    needs ``p = o(n**(1/3))``).
    """
    if q < 4:
        raise ValueError(f"moment order q must be >= 4, got {q}")
    if not 1 <= k < n:
        raise DimensionError(f"need 1 <= k < n, got k={k}, n={n}")
    m = n - k
    expo = (2 - q) / (2 * q)
    vals = {
        "a5_first": p * k**expo,
        "a5_second": p * m**expo,
        "a6_first": p ** (2 + 4 / q) / k,
        "a6_second": p ** (2 + 4 / q) / m,
        "p_cubed_over_n": p**3 / n,
    }
    labels = {
        "a5_first": f"p k^((2-q)/(2q)) = {vals['a5_first']:.3g} >= 1",
        "a5_second": f"p (n-k)^((2-q)/(2q)) = {vals['a5_second']:.3g} >= 1",
        "a6_first": f"p^(2+4/q) / k = {vals['a6_first']:.3g} >= 1",
        "a6_second": f"p^(2+4/q) / (n-k) = {vals['a6_second']:.3g} >= 1",
        "p_cubed_over_n": f"p^3 / n = {vals['p_cubed_over_n']:.3g} >= 1; normal approximation doubtful",
    }
    warns = tuple(labels[key] for key, v in vals.items() if v >= 1)
    return AssumptionReport(q=float(q), warnings=warns, **{key: float(v) for key, v in vals.items()})


@dataclass(frozen=True, eq=False)
class TestConfig:
    """Options of :func:`test_changepoint`.

    ``critical_value`` is ``"normal_quantile"`` or a positive number.
    ``sigma2`` and ``fourth_moment`` override the first-segment estimates.
    """

    __test__ = False

    alpha: float = 0.05
    beta0: np.ndarray | None = None
    critical_value: str | float = NORMAL_QUANTILE
    sigma_convention: str = PROOF_CONSISTENT
    sigma2: float | None = None
    fourth_moment: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.critical_value != NORMAL_QUANTILE:
            c = float(self.critical_value)
            if not (np.isfinite(c) and c >= 0):
                raise ValueError(f"fixed critical value must be nonnegative, got {self.critical_value}")
            object.__setattr__(self, "critical_value", c)
        if self.sigma_convention not in CONVENTIONS:
            raise ValueError(f"sigma_convention must be one of {CONVENTIONS}")
        if self.beta0 is not None:
            b = np.array(self.beta0, dtype=np.float64).ravel()
            b.setflags(write=False)
            object.__setattr__(self, "beta0", b)
        if self.sigma2 is not None and not float(self.sigma2) > 0:
            raise ValueError("sigma2 override must be positive")

    def critical(self) -> float:
        if self.critical_value == NORMAL_QUANTILE:
            return float(norm.ppf(1 - self.alpha / 2))
        return float(self.critical_value)


@dataclass(frozen=True, eq=False)
class TestResult:
    __test__ = False

    z_value: float
    critical_value: float
    reject: bool
    p_value: float
    beta_used: np.ndarray
    sigma2_used: float
    fourth_moment_used: float
    assumption_report: AssumptionReport
    degenerate: bool = False
    beta_source: str = "known"
    sigma2_source: str = "estimated"
    quadratic_form: float = float("nan")
    delta_n: float = float("nan")

    def to_dict(self) -> dict:
        rep = self.assumption_report
        return {
            "z_value": _json_float(self.z_value),
            "critical_value": self.critical_value,
            "reject": self.reject,
            "p_value": _json_float(self.p_value),
            "beta_used": [float(b) for b in self.beta_used],
            "beta_source": self.beta_source,
            "sigma2_used": self.sigma2_used,
            "sigma2_source": self.sigma2_source,
            "fourth_moment_used": self.fourth_moment_used,
            "quadratic_form": _json_float(self.quadratic_form),
            "delta_n": _json_float(self.delta_n),
            "degenerate": self.degenerate,
            "assumptions": {
                "q": rep.q,
                "a5_first": rep.a5_first,
                "a5_second": rep.a5_second,
                "a6_first": rep.a6_first,
                "a6_second": rep.a6_second,
                "p_cubed_over_n": rep.p_cubed_over_n,
                "warnings": list(rep.warnings),
            },
        }


def _json_float(x: float):
    return float(x) if np.isfinite(x) else None


def estimate_first_segment(design: Design, Y) -> tuple[np.ndarray, float]:
    """Least squares on observations ``1..k`` and ``sigma2 = RSS / (k - p)``."""
    Y = _check_y(design, Y)
    k, p = design.k, design.p
    if k <= p:
        raise InsufficientDataError(f"first segment has k={k} <= p={p} observations")
    X1 = design.X[:k]
    beta, _, rank, _ = np.linalg.lstsq(X1, Y[:k], rcond=None)
    if rank < p:
        raise SingularDesignError(f"first-segment design has rank {rank} < p={p}")
    r = Y[:k] - X1 @ beta
    return beta, float(r @ r) / (k - p)


def z_statistic(psi, V, delta_n: float, n: int, p: int) -> float:
    """``(n psi^t V^-1 psi - p) / (Delta_n / n)``."""
    if not delta_n > 0:
        raise ValueError(f"Delta_n must be positive, got {delta_n}")
    return (n * quadratic_form(np.asarray(psi, dtype=np.float64), V) - p) / (delta_n / n)


def _check_y(design: Design, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.size != design.n:
        raise DimensionError(f"Y has length {Y.size}, design has n={design.n}")
    if not np.all(np.isfinite(Y)):
        raise DimensionError("Y contains non-finite values")
    return Y


def _prepared(design: Design, config: TestConfig, prepared: PreparedDesign | None) -> PreparedDesign:
    if prepared is None:
        return PreparedDesign(design, config.sigma_convention)
    if prepared.design is not design and not np.array_equal(prepared.design.X, design.X):
        raise ValueError("prepared design does not match the design")
    if prepared.design.k != design.k or prepared.convention != config.sigma_convention:
        raise ValueError("prepared design has a different k or convention")
    return prepared


def _evaluate(design: Design, Y: np.ndarray, beta: np.ndarray, beta_second: np.ndarray,
              config: TestConfig, prep: PreparedDesign, beta_source: str) -> TestResult:
    k, n, p = design.k, design.n, design.p
    X = design.X
    resid = np.concatenate([Y[:k] - X[:k] @ beta, Y[k:] - X[k:] @ beta_second])
    r1 = resid[:k]
    report = check_assumptions(n, k, p)
    crit = config.critical()

    if config.sigma2 is not None:
        sigma2, s2_source = float(config.sigma2), "given"
    else:
        if k <= p:
            raise InsufficientDataError(f"sigma2 estimate needs k > p, got k={k}, p={p}")
        sigma2, s2_source = float(r1 @ r1) / (k - p), "estimated"
        if np.linalg.norm(r1) <= NOISELESS_RTOL * np.linalg.norm(Y[:k]):
            sigma2 = 0.0

    if config.fourth_moment is not None:
        m4 = float(config.fourth_moment)
    elif sigma2 > 0:
        # plug-in kurtosis of the first-segment residuals, rescaled to sigma2
        mean2 = float(np.mean(r1 * r1))
        m4 = kurtosis(mean2, float(np.mean(r1**4))) * sigma2**2 if mean2 > 0 else 0.0
    else:
        m4 = 0.0

    if not sigma2 > 0 or not m4 > 0:
        nan = float("nan")
        return TestResult(nan, crit, False, nan, beta, sigma2, m4, report, True,
                          beta_source, s2_source)

    scores = scores_from_residuals(design, resid, beta)
    psi = psi_n(scores)
    quad = prep.scaled_quadratic(psi, sigma2)
    delta = prep.delta(sigma2, m4)
    z = (quad - p) / (delta / n)
    return TestResult(
        z_value=float(z),
        critical_value=crit,
        reject=bool(abs(z) >= crit),
        p_value=float(2 * norm.sf(abs(z))),
        beta_used=beta,
        sigma2_used=sigma2,
        fourth_moment_used=m4,
        assumption_report=report,
        degenerate=False,
        beta_source=beta_source,
        sigma2_source=s2_source,
        quadratic_form=float(quad),
        delta_n=float(delta),
    )


def test_changepoint(design: Design, Y, config: TestConfig = TestConfig(),
                     prepared: PreparedDesign | None = None) -> TestResult:
    """Test for no change after observation ``k``.

    With ``config.beta0`` the scores use the known phase-one coefficients;
    otherwise they are estimated by least squares on ``1..k``.  ``prepared``
    lets repeated calls on one design skip the design-only work.

    A zero variance estimate (noiseless first segment, up to round-off
    ``NOISELESS_RTOL`` relative to the response) gives
    ``degenerate=True`` with ``z_value = nan`` and no rejection.
    """
    Y = _check_y(design, Y)
    prep = _prepared(design, config, prepared)
    if config.beta0 is not None:
        beta = config.beta0
        if beta.size != design.p:
            raise DimensionError(f"beta0 has length {beta.size}, design has p={design.p}")
        source = "known"
    else:
        beta, _ = estimate_first_segment(design, Y)
        source = "estimated"
    return _evaluate(design, Y, beta, beta, config, prep, source)


test_changepoint.__test__ = False


@dataclass(frozen=True, eq=False)
class ConfidenceQuery:
    delta: np.ndarray

    def __post_init__(self):
        d = np.array(self.delta, dtype=np.float64).ravel()
        if not np.all(np.isfinite(d)):
            raise DimensionError("delta must be finite")
        object.__setattr__(self, "delta", d)


def confidence_region_membership(design: Design, Y, beta0, query, config: TestConfig = TestConfig(),
                                 prepared: PreparedDesign | None = None) -> tuple[bool, float]:
    """Is ``delta = beta0 - beta2`` inside the region ``|Z| < c``?

    Second-phase residuals are taken at ``beta0 - delta``; ``delta = 0``
    reproduces :func:`test_changepoint` exactly.
    """
    Y = _check_y(design, Y)
    beta0 = np.array(beta0, dtype=np.float64).ravel()
    delta = query.delta if isinstance(query, ConfidenceQuery) else ConfidenceQuery(query).delta
    if beta0.size != design.p or delta.size != design.p:
        raise DimensionError("beta0 and delta must have length p")
    beta0.setflags(write=False)
    prep = _prepared(design, config, prepared)
    res = _evaluate(design, Y, beta0, beta0 - delta, config, prep, "known")
    member = bool(abs(res.z_value) < res.critical_value)
    return member, res.z_value
