"""Monte Carlo experiments: coverage rates, empirical powers, critical values.

Every experiment uses one fixed design drawn from the master seed and fresh
errors per replicate.  Replicate ``r`` draws from the stream
``SeedSequence(master_seed, spawn_key=(1, r))`` and the design from
``spawn_key=(0,)``, so results do not depend on how replicates are spread
over worker processes.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .elcore import CONVENTIONS, PROOF_CONSISTENT, PreparedDesign
from .errors import ConfigError, ElChangeError, InsufficientReplicatesError
from .inference import NORMAL_QUANTILE, TestConfig, test_changepoint
from .model import (
    CoefficientPair,
    Design,
    ErrorSpec,
    generate_design,
    generate_response,
    sequence_beta,
)

ONE_MINUS_BETA0 = "one_minus_beta0"
SIGMA2_SOURCES = ("estimated", "true")
MIN_CALIBRATION_REPLICATES = 100

_DESIGN_KEY = 0
_REPLICATE_KEY = 1


def design_seed(master_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(_DESIGN_KEY,))


def replicate_seed(master_seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(_REPLICATE_KEY, int(r)))


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """One Monte Carlo configuration.

    ``alternative`` is ``None`` (no change), ``"one_minus_beta0"``, a
    sequence of ``(index, offset)`` pairs with 1-based indices into the
    coefficient vector, or an explicit phase-two coefficient vector.
    ``sigma2_source="true"`` plugs the exact error moments into the
    statistic; ``"estimated"`` uses the first-segment residual estimates.
    """

    n: int
    k: int
    p: int
    error_law: str = "gaussian"
    beta0: tuple | None = None
    alternative: object = None
    replications: int = 2000
    master_seed: int = 0
    alpha: float = 0.05
    critical_value: str | float = NORMAL_QUANTILE
    estimate_beta: bool = False
    sigma2_source: str = "true"
    convention: str = PROOF_CONSISTENT

    def __post_init__(self):
        for name in ("n", "k", "p", "replications"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if self.p < 1 or self.n < 2 or not 1 <= self.k < self.n:
            raise ConfigError(f"need n >= 2, p >= 1 and 1 <= k < n; got n={self.n}, k={self.k}, p={self.p}")
        try:
            ErrorSpec.from_name(self.error_law)
        except ElChangeError as exc:
            raise ConfigError(str(exc)) from None
        if self.sigma2_source not in SIGMA2_SOURCES:
            raise ConfigError(f"sigma2_source must be one of {SIGMA2_SOURCES}")
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"convention must be one of {CONVENTIONS}")
        if self.beta0 is not None:
            b = tuple(float(x) for x in np.ravel(self.beta0))
            if len(b) != self.p:
                raise ConfigError(f"beta0 has length {len(b)}, expected p={self.p}")
            object.__setattr__(self, "beta0", b)
        try:
            TestConfig(alpha=self.alpha, critical_value=self.critical_value)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.beta2()

    @property
    def theta(self) -> float:
        return self.k / self.n

    def beta1(self) -> np.ndarray:
        return sequence_beta(self.p) if self.beta0 is None else np.array(self.beta0)

    def beta2(self) -> np.ndarray:
        b = self.beta1()
        alt = self.alternative
        if alt is None:
            return b
        if isinstance(alt, str):
            if alt != ONE_MINUS_BETA0:
                raise ConfigError(f"unknown alternative {alt!r}")
            return 1.0 - b
        arr = np.asarray(alt, dtype=np.float64)
        if arr.ndim == 2 and arr.shape[1] == 2:
            out = b.copy()
            for idx, off in arr:
                j = int(idx)
                if j != idx or not 1 <= j <= self.p:
                    raise ConfigError(f"sparse change index {idx} outside 1..{self.p}")
                out[j - 1] += off
            return out
        if arr.shape == (self.p,):
            return arr.copy()
        raise ConfigError("alternative must be None, 'one_minus_beta0', (index, offset) pairs or a p-vector")

    def error_spec(self) -> ErrorSpec:
        return ErrorSpec.from_name(self.error_law)

    def design(self) -> Design:
        return generate_design(self.n, self.p, self.k, design_seed(self.master_seed))

    def test_config(self) -> TestConfig:
        err = self.error_spec()
        true = self.sigma2_source == "true"
        return TestConfig(
            alpha=self.alpha,
            beta0=None if self.estimate_beta else self.beta1(),
            critical_value=self.critical_value,
            sigma_convention=self.convention,
            sigma2=err.sigma2 if true else None,
            fourth_moment=err.fourth_moment if true else None,
        )

    def critical(self) -> float:
        return self.test_config().critical()


@dataclass(frozen=True, eq=False)
class ExperimentOutcome:
    coverage_rate: float
    power: float | None
    critical_value_used: float
    z_samples: np.ndarray
    runtime: float
    failures: int = 0


def _chunk_z(spec: ExperimentSpec, start: int, stop: int) -> np.ndarray:
    design = spec.design()
    prep = PreparedDesign(design, spec.convention)
    coeffs = CoefficientPair(spec.beta1(), spec.beta2())
    err = spec.error_spec()
    config = spec.test_config()
    out = np.empty(stop - start)
    for j, r in enumerate(range(start, stop)):
        Y = generate_response(design, coeffs, err, replicate_seed(spec.master_seed, r))
        try:
            res = test_changepoint(design, Y, config, prep)
            out[j] = res.z_value
        except ElChangeError:
            out[j] = np.nan
    return out


def default_workers() -> int:
    return os.cpu_count() or 1


def simulate_z(spec: ExperimentSpec, replications: int | None = None,
               workers: int | None = None) -> np.ndarray:
    """Statistic values of replicates ``0..M-1`` in index order.

    Replicates whose evaluation fails come back as ``nan``.
    """
    M = spec.replications if replications is None else int(replications)
    if M < 1:
        raise ConfigError(f"replications must be >= 1, got {M}")
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or M < 2:
        return _chunk_z(spec, 0, M)
    n_chunks = min(M, 4 * workers)
    bounds = np.linspace(0, M, n_chunks + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_chunk_z, [spec] * n_chunks, bounds[:-1], bounds[1:]))
    return np.concatenate(parts)


def _outcome(z: np.ndarray, crit: float, t0: float, power: bool) -> ExperimentOutcome:
    M = z.size
    accepted = int(np.count_nonzero(np.abs(z) < crit))
    cr = accepted / M
    return ExperimentOutcome(
        coverage_rate=cr,
        power=(M - accepted) / M if power else None,
        critical_value_used=crit,
        z_samples=z,
        runtime=time.perf_counter() - t0,
        failures=int(np.count_nonzero(np.isnan(z))),
    )


def run_coverage(spec: ExperimentSpec, workers: int | None = None) -> ExperimentOutcome:
    """Fraction of no-change replicates with ``|Z| < c``.

    Failed replicates count as rejections.
    """
    if spec.alternative is not None:
        raise ConfigError("run_coverage needs alternative=None")
    t0 = time.perf_counter()
    z = simulate_z(spec, workers=workers)
    return _outcome(z, spec.critical(), t0, power=False)


def run_power(spec: ExperimentSpec, workers: int | None = None) -> ExperimentOutcome:
    """Fraction of replicates with ``|Z| >= c`` under a change."""
    if spec.alternative is None:
        raise ConfigError("run_power needs an alternative")
    t0 = time.perf_counter()
    z = simulate_z(spec, workers=workers)
    return _outcome(z, spec.critical(), t0, power=True)


def empirical_quantile(samples, q: float) -> float:
    """Order statistic ``x_(ceil(q M))`` of the sorted sample."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    M = x.size
    if M == 0:
        raise InsufficientReplicatesError("empty sample")
    idx = min(max(math.ceil(q * M), 1), M) - 1
    return float(x[idx])


def critical_from_samples(z, alpha: float = 0.05) -> float:
    """``max(c1, |c2|)`` from the upper and lower ``alpha/2`` empirical quantiles."""
    z = np.asarray(z, dtype=np.float64)
    if z.size < MIN_CALIBRATION_REPLICATES:
        raise InsufficientReplicatesError(
            f"need at least {MIN_CALIBRATION_REPLICATES} samples, got {z.size}")
    z = np.where(np.isnan(z), np.inf, z)
    c1 = empirical_quantile(z, 1 - alpha / 2)
    c2 = empirical_quantile(z, alpha / 2)
    return max(c1, abs(c2))


def empirical_critical_value(spec: ExperimentSpec, replications: int = 10000,
                             workers: int | None = None) -> float:
    """Simulated critical value for the no-change configuration ``spec``.

    Failed replicates are placed at ``+inf``, which can only raise the value.
    """
    if spec.alternative is not None:
        raise ConfigError("empirical_critical_value needs alternative=None")
    if replications < MIN_CALIBRATION_REPLICATES:
        raise InsufficientReplicatesError(
            f"need at least {MIN_CALIBRATION_REPLICATES} replicates, got {replications}")
    z = simulate_z(spec, replications=replications, workers=workers)
    return critical_from_samples(z, spec.alpha)


def with_critical(spec: ExperimentSpec, c: float) -> ExperimentSpec:
    return replace(spec, critical_value=float(c))
