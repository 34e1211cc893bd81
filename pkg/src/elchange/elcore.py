"""Empirical-likelihood kernel for a change at a known index ``k``.

Scores ``z_i(beta) = X_i (Y_i - X_i^t beta)``, the two-sample moment
summaries ``psi_n``, ``S_n``, ``V_n``, the common Lagrange multiplier of the
restricted EL ratio, and the variance normaliser ``Delta_n``.

Notation: ``theta = k/n`` and the segment weights are ``1/(n theta)`` for
``i <= k`` and ``-1/(n (1-theta))`` for ``i > k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateSegmentError,
    DimensionError,
    InfeasibleMultiplierError,
    NumericalInconsistencyError,
    SingularDesignError,
)
from .model import Design

PROOF_CONSISTENT = "proof_consistent"
THEOREM_TEXT = "theorem_text"
CONVENTIONS = (PROOF_CONSISTENT, THEOREM_TEXT)

FEASIBILITY_MARGIN = 1e-10
NEGATIVE_TERM_RTOL = 1e-9
MASS_RTOL = 1e-6
_BLOCK = 256


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Score vectors ``z_i(beta)`` stacked as rows of ``Z``."""

    Z: np.ndarray
    beta: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def theta(self) -> float:
        return self.k / self.n

    @property
    def first(self) -> np.ndarray:
        return self.Z[: self.k]

    @property
    def second(self) -> np.ndarray:
        return self.Z[self.k:]


@dataclass(frozen=True, eq=False)
class LagrangeSolution:
    lam: np.ndarray
    residual_norm: float
    implied_q1: np.ndarray
    implied_q2: np.ndarray
    iterations: int
    converged: bool

    @property
    def probabilities_valid(self) -> bool:
        """All implied probabilities lie strictly inside (0, 1)."""
        q = np.concatenate([self.implied_q1, self.implied_q2])
        return bool(np.all((q > 0) & (q < 1)))

    @property
    def weighted_mass(self) -> float:
        """``k sum(q1) + (n-k) sum(q2)``; equals ``n`` at any root of the constraint."""
        k, m = self.implied_q1.size, self.implied_q2.size
        return float(k * self.implied_q1.sum() + m * self.implied_q2.sum())


@dataclass(frozen=True, eq=False)
class MomentDiagnostics:
    omega2: np.ndarray

    @property
    def max_abs_omega2(self) -> float:
        return float(np.max(np.abs(self.omega2)))


def _segment_weights(n: int, k: int) -> np.ndarray:
    theta = k / n
    w = np.empty(n)
    w[:k] = 1.0 / (n * theta)
    w[k:] = -1.0 / (n * (1.0 - theta))
    return w


def _symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def spd_factor(A: np.ndarray):
    """Cholesky factor in the :func:`scipy.linalg.cho_factor` format."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise SingularDesignError("matrix has non-finite entries")
    try:
        return scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"matrix is not positive definite: {exc}") from None


def _as_factor(V):
    if isinstance(V, tuple):
        return V
    return spd_factor(V)


def spd_solve(V, b: np.ndarray) -> np.ndarray:
    """Solve ``V x = b`` for SPD ``V`` given as a matrix or a Cholesky factor."""
    return scipy.linalg.cho_solve(_as_factor(V), b, check_finite=False)


def quadratic_form(psi: np.ndarray, V) -> float:
    """``psi^t V^{-1} psi`` through the triangular factor of ``V``."""
    c, lower = _as_factor(V)
    L = c if lower else c.T
    y = scipy.linalg.solve_triangular(L, psi, lower=True, check_finite=False)
    return float(y @ y)


# ---------------------------------------------------------------------------
# scores and moment summaries


def score_vectors(design: Design, Y, beta) -> ScoreSet:
    Y = np.asarray(Y, dtype=np.float64).ravel()
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if Y.size != design.n:
        raise DimensionError(f"Y has length {Y.size}, design has n={design.n}")
    if beta.size != design.p:
        raise DimensionError(f"beta has length {beta.size}, design has p={design.p}")
    resid = Y - design.X @ beta
    return scores_from_residuals(design, resid, beta)


def scores_from_residuals(design: Design, resid: np.ndarray, beta=None) -> ScoreSet:
    """Scores ``X_i r_i`` for an arbitrary residual vector."""
    resid = np.asarray(resid, dtype=np.float64).ravel()
    if resid.size != design.n:
        raise DimensionError(f"residual vector has length {resid.size}, design has n={design.n}")
    Z = design.X * resid[:, None]
    if not np.all(np.isfinite(Z)):
        raise DimensionError("scores contain non-finite values")
    Z.setflags(write=False)
    b = np.full(design.p, np.nan) if beta is None else np.asarray(beta, dtype=np.float64)
    return ScoreSet(Z, b, design.k)


def psi_n(scores: ScoreSet) -> np.ndarray:
    """Weighted difference of the two segment score means."""
    n, k = scores.n, scores.k
    theta = scores.theta
    return scores.first.sum(axis=0) / (n * theta) - scores.second.sum(axis=0) / (n * (1 - theta))


def s_n_matrix(scores: ScoreSet) -> np.ndarray:
    n, theta = scores.n, scores.theta
    A, B = scores.first, scores.second
    S = A.T @ A / (n * theta**2) + B.T @ B / (n * (1 - theta) ** 2)
    return _symmetrize(S)


def gram_weights(design: Design) -> np.ndarray:
    """Per-row weights ``n w_i^2`` so that ``V = sigma2 * sum_i n w_i^2 X_i X_i^t``."""
    n, theta = design.n, design.theta
    out = np.empty(n)
    out[: design.k] = 1.0 / (n * theta**2)
    out[design.k:] = 1.0 / (n * (1 - theta) ** 2)
    return out


def v_n_matrix(design: Design, sigma2: float) -> np.ndarray:
    """Population counterpart of ``S_n`` with ``Var(z_i) = sigma2 X_i X_i^t``.

    Raises :class:`SingularDesignError` when the result is not positive
    definite.
    """
    sigma2 = float(sigma2)
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    X = design.X
    V = _symmetrize((X * (sigma2 * gram_weights(design))[:, None]).T @ X)
    spd_factor(V)
    return V


def moment_diagnostics(scores: ScoreSet, V) -> MomentDiagnostics:
    """Second-order ``omega`` values: ``V^{-1/2} S_n V^{-1/2} - I``."""
    V = np.asarray(V, dtype=np.float64)
    evals, evecs = np.linalg.eigh(_symmetrize(V))
    if evals[0] <= 0:
        raise SingularDesignError("V is not positive definite")
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    W = scores.Z @ inv_sqrt
    wscores = ScoreSet(W, scores.beta, scores.k)
    omega2 = s_n_matrix(wscores) - np.eye(scores.p)
    return MomentDiagnostics(_symmetrize(omega2))


# ---------------------------------------------------------------------------
# Lagrange multiplier


def _signed_scores(scores: ScoreSet):
    """Rows ``y_i`` and offsets ``c_i`` with denominators ``c_i + lam^t y_i``."""
    k, theta = scores.k, scores.theta
    Ysg = np.array(scores.Z, copy=True)
    Ysg[k:] *= -1.0
    c = np.empty(scores.n)
    c[:k] = theta
    c[k:] = 1.0 - theta
    return Ysg, c


def constraint(scores: ScoreSet, lam) -> np.ndarray:
    """Left-hand side of the multiplier equation, a p-vector."""
    Ysg, c = _signed_scores(scores)
    d = c + Ysg @ np.asarray(lam, dtype=np.float64)
    return (Ysg / d[:, None]).sum(axis=0)


def _solution(scores, lam, Ysg, c, iterations, converged):
    d = c + Ysg @ lam
    F = (Ysg / d[:, None]).sum(axis=0)
    q = 1.0 / (scores.n * d)
    # At a root sum(c_i / d_i) = n.  When 0 lies outside the convex hull of
    # the signed scores the residual still decays as |lam| grows, but this
    # mass drains to zero, so it separates a true root from escape to infinity.
    mass = float(np.sum(c / d))
    converged = converged and abs(mass - scores.n) <= MASS_RTOL * scores.n
    return LagrangeSolution(
        lam=lam,
        residual_norm=float(np.max(np.abs(F))) if F.size else 0.0,
        implied_q1=q[: scores.k],
        implied_q2=q[scores.k:],
        iterations=iterations,
        converged=converged,
    )


def _polished(scores, lam, Ysg, c, d, F, iterations):
    """One more full Newton step from a converged iterate, kept if it helps.

    Near the root the iteration is quadratic, so this takes a solution at
    ``tol`` down to rounding level for the price of one step.
    """
    Yd = Ysg / d[:, None]
    try:
        step = scipy.linalg.solve(Yd.T @ Yd, F, assume_a="pos", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return _solution(scores, lam, Ysg, c, iterations, True)
    cand = lam + step
    dc = c + Ysg @ cand
    if np.min(dc) > FEASIBILITY_MARGIN:
        Fc = (Ysg / dc[:, None]).sum(axis=0)
        if np.max(np.abs(Fc)) < np.max(np.abs(F)):
            return _solution(scores, cand, Ysg, c, iterations + 1, True)
    return _solution(scores, lam, Ysg, c, iterations, True)


def solve_lagrange(scores: ScoreSet, tol: float = 1e-8, max_iter: int = 100) -> LagrangeSolution:
    """Damped Newton iteration for the common multiplier ``lam``.

    The constraint is the gradient of the concave function
    ``sum_i log(c_i + lam^t y_i)``, so Newton steps are ascent directions;
    each step is halved until every denominator exceeds
    ``FEASIBILITY_MARGIN`` and the concave objective does not decrease.
    On hitting ``max_iter`` the last iterate is returned with
    ``converged=False``, as is an iterate whose residual is small only
    because ``lam`` is escaping to infinity (no root exists).
    """
    Ysg, c = _signed_scores(scores)
    p = scores.p
    lam = np.zeros(p)
    zero1 = not np.any(scores.first)
    zero2 = not np.any(scores.second)
    if zero1 and zero2:
        return _solution(scores, lam, Ysg, c, 0, True)
    if zero1 or zero2:
        which = "first" if zero1 else "second"
        raise DegenerateSegmentError(f"all scores of the {which} segment are zero")

    d = c.copy()
    obj = float(np.sum(np.log(d)))
    for it in range(1, max_iter + 1):
        F = (Ysg / d[:, None]).sum(axis=0)
        if np.max(np.abs(F)) <= tol:
            return _polished(scores, lam, Ysg, c, d, F, it - 1)
        Yd = Ysg / d[:, None]
        H = Yd.T @ Yd
        try:
            step = scipy.linalg.solve(H, F, assume_a="pos", check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(H, F, rcond=None)[0]
        slope = float(F @ step)
        t = 1.0
        while t > 1e-30:
            cand = lam + t * step
            dc = c + Ysg @ cand
            if np.min(dc) > FEASIBILITY_MARGIN:
                obj_c = float(np.sum(np.log(dc)))
                if obj_c >= obj + 1e-4 * t * slope or t * np.max(np.abs(step)) < 1e-15:
                    break
            t *= 0.5
        else:
            return _solution(scores, lam, Ysg, c, it, False)
        lam, d, obj = cand, dc, obj_c
    F = (Ysg / d[:, None]).sum(axis=0)
    return _solution(scores, lam, Ysg, c, max_iter, bool(np.max(np.abs(F)) <= tol))


def lambda_approx(psi, V) -> np.ndarray:
    """First-order multiplier ``V^{-1} psi`` (no explicit inverse)."""
    return spd_solve(V, np.asarray(psi, dtype=np.float64))


def el_statistic(scores: ScoreSet, lam) -> float:
    """Restricted EL ratio statistic at multiplier ``lam``."""
    n, k = scores.n, scores.k
    lam = np.asarray(lam, dtype=np.float64)
    a = (n / k) * (scores.first @ lam)
    b = -(n / (n - k)) * (scores.second @ lam)
    if np.any(a <= -1.0) or np.any(b <= -1.0):
        raise InfeasibleMultiplierError("multiplier makes a log argument non-positive")
    return float(2.0 * np.sum(np.log1p(a)) + 2.0 * np.sum(np.log1p(b)))


# ---------------------------------------------------------------------------
# Delta_n


def _within_prefix_sq(Xs: np.ndarray, Us: np.ndarray) -> np.ndarray:
    """``sum_{l<i} (u_i^t X_l)^2`` for rows of one segment, via a running Gram.

    The Gram matrix is accumulated block by block with Kahan compensation.
    """
    m, p = Xs.shape
    out = np.empty(m)
    P = np.zeros((p, p))
    comp = np.zeros((p, p))
    for s in range(0, m, _BLOCK):
        Xb, Ub = Xs[s:s + _BLOCK], Us[s:s + _BLOCK]
        prior = np.einsum("ij,ij->i", Ub @ P, Ub)
        G = Ub @ Xb.T
        within = np.tril(G * G, -1).sum(axis=1)
        out[s:s + _BLOCK] = prior + within
        y = Xb.T @ Xb - comp
        t = P + y
        comp = (t - P) - y
        P = t
    return out


@dataclass(frozen=True, eq=False)
class DeltaComponents:
    """Scale-free pieces of ``sigma_i^2``.

    With ``kappa = E[eps^4] / sigma^4`` every term is
    ``cross[i] + (kappa - 1) * diag[i]``; both arrays depend on the design
    only.
    """

    cross: np.ndarray
    diag: np.ndarray
    convention: str

    def terms(self, kappa: float) -> np.ndarray:
        return self.cross + (kappa - 1.0) * self.diag

    def delta(self, kappa: float) -> float:
        return float(np.sqrt(_checked_terms(self, kappa).sum()))


def _checked_terms(comp: DeltaComponents, kappa: float) -> np.ndarray:
    t = comp.terms(kappa)
    positive = comp.cross + kappa * comp.diag
    bad = t < -NEGATIVE_TERM_RTOL * positive
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NumericalInconsistencyError(
            f"sigma_{i + 1}^2 = {t[i]:.3e} is negative (kappa = {kappa:.6g} < 1?)")
    return np.maximum(t, 0.0)


def delta_components(design: Design, convention: str = PROOF_CONSISTENT, factor=None) -> DeltaComponents:
    """Fast ``O(n p^2 + p^3)`` evaluation of the ``sigma_i^2`` building blocks.

    Uses ``tr(V^-1 V_(i) V^-1 V_(l)) = sigma^4 (X_i^t V^-1 X_l)^2`` and
    ``tr(V^-1 V_(i)) = sigma^2 X_i^t V^-1 X_i``; the inner sums over ``l < i``
    become ``u_i^t P_{i-1} u_i`` with ``u_i = V^-1 X_i`` and the prefix Gram
    ``P_m = sum_{l<=m} X_l X_l^t``. ``factor`` may carry a precomputed
    Cholesky factor of ``V`` at ``sigma2 = 1``.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    X, k, n = design.X, design.k, design.n
    theta = design.theta
    if factor is None:
        factor = spd_factor(v_n_matrix(design, 1.0))
    U = spd_solve(factor, X.T).T
    g = np.einsum("ij,ij->i", X, U)

    own = np.empty(n)
    own[:k] = _within_prefix_sq(X[:k], U[:k])
    own[k:] = _within_prefix_sq(X[k:], U[k:])
    Pk = X[:k].T @ X[:k]
    U2 = U[k:]
    from_first = np.einsum("ij,ij->i", U2 @ Pk, U2)

    t4 = theta**-4
    s4 = (1 - theta) ** -4
    mixed = 4.0 / (theta**2 * (1 - theta) ** 2)
    cross = np.empty(n)
    diag_w = np.empty(n)
    cross[:k] = 4.0 * t4 * own[:k]
    diag_w[:k] = t4
    cross[k:] = mixed * from_first + 4.0 * s4 * own[k:]
    diag_w[k:] = s4
    if convention == THEOREM_TEXT:
        # observation k+1 takes the first-segment formula with l = 1..k
        cross[k] = 4.0 * t4 * from_first[0]
        diag_w[k] = t4
    return DeltaComponents(cross=cross, diag=diag_w * g * g, convention=convention)


def kurtosis(sigma2: float, fourth_moment: float) -> float:
    sigma2 = float(sigma2)
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    return float(fourth_moment) / sigma2**2


def variance_terms(design: Design, sigma2: float, fourth_moment: float,
                   convention: str = PROOF_CONSISTENT) -> np.ndarray:
    """The individual ``sigma_i^2``, ``i = 1..n``."""
    comp = delta_components(design, convention)
    return _checked_terms(comp, kurtosis(sigma2, fourth_moment))


def delta_n(design: Design, sigma2: float, fourth_moment: float,
            convention: str = PROOF_CONSISTENT) -> float:
    """``Delta_n = sqrt(sum_i sigma_i^2)``."""
    return float(np.sqrt(variance_terms(design, sigma2, fourth_moment, convention).sum()))


# ---------------------------------------------------------------------------


class PreparedDesign:
    """Design-only quantities reused across many responses on one design."""

    def __init__(self, design: Design, convention: str = PROOF_CONSISTENT):
        if convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
        self.design = design
        self.convention = convention
        self.unit_V = v_n_matrix(design, 1.0)
        self.unit_factor = spd_factor(self.unit_V)
        self.weights = _segment_weights(design.n, design.k)

    @cached_property
    def components(self) -> DeltaComponents:
        return delta_components(self.design, self.convention, self.unit_factor)

    def V(self, sigma2: float) -> np.ndarray:
        return sigma2 * self.unit_V

    def delta(self, sigma2: float, fourth_moment: float) -> float:
        return self.components.delta(kurtosis(sigma2, fourth_moment))

    def scaled_quadratic(self, psi: np.ndarray, sigma2: float) -> float:
        """``n psi^t V^{-1} psi`` for ``V`` at variance ``sigma2``."""
        return self.design.n * quadratic_form(psi, self.unit_factor) / sigma2


@dataclass(frozen=True, eq=False)
class MomentSummary:
    psi: np.ndarray
    S: np.ndarray
    V: np.ndarray
    V_chol: tuple
    delta: float
    sigma2: float
    fourth_moment: float
    theta: float


def moment_summary(design: Design, scores: ScoreSet, sigma2: float, fourth_moment: float,
                   convention: str = PROOF_CONSISTENT) -> MomentSummary:
    V = v_n_matrix(design, sigma2)
    return MomentSummary(
        psi=psi_n(scores),
        S=s_n_matrix(scores),
        V=V,
        V_chol=spd_factor(V),
        delta=delta_n(design, sigma2, fourth_moment, convention),
        sigma2=float(sigma2),
        fourth_moment=float(fourth_moment),
        theta=design.theta,
    )
