"""Dense linear algebra and scalar statistical kernels.

Everything here is a pure function on immutable inputs. Matrices are plain
numpy arrays; factorizations delegate to LAPACK (via numpy/scipy) behind the
contracts the solver modules rely on: explicit symmetry checks, explicit
singularity errors, and residual verification of linear solves.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import betaincinv, gammaln

from .errors import (
    InvalidInputError,
    NotPositiveDefiniteError,
    NumericalError,
    SingularSystemError,
)

__all__ = [
    "cholesky",
    "jittered_cholesky",
    "solve_linear",
    "norm_cdf",
    "norm_quantile",
    "binomial_tail_leq",
    "binomial_lower_confidence",
    "log_choose",
]

_SYM_RTOL = 1e-12
_PIVOT_RTOL = 1e-14
_RESIDUAL_RTOL = 1e-8

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _require_symmetric(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {m.shape}")
    scale = 1.0 + float(np.max(np.abs(m))) if m.size else 1.0
    skew = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if skew > _SYM_RTOL * scale:
        raise InvalidInputError(f"matrix is not symmetric: max|m - m.T| = {skew:.3e}")


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor L with L @ L.T == m.

    Raises NotPositiveDefiniteError when a pivot is non-positive, which
    callers treat as the signal to apply their jitter policy.
    """
    m = np.asarray(m, dtype=float)
    _require_symmetric(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from exc


def jittered_cholesky(m: np.ndarray) -> np.ndarray:
    """Cholesky with the PSD fallback used for covariance matrices.

    On a non-positive pivot, eps * I is added with eps = 1e-10 * trace/dim,
    retried up to 3 times with eps growing by 100x. An all-zero matrix
    factors to the zero matrix (degenerate, deterministic supply).
    """
    m = np.asarray(m, dtype=float)
    _require_symmetric(m)
    if not np.any(m):
        return np.zeros_like(m)
    try:
        return cholesky(m)
    except NotPositiveDefiniteError:
        pass
    dim = m.shape[0]
    eps = 1e-10 * float(np.trace(m)) / dim
    if eps <= 0.0:
        raise NumericalError(
            "cannot repair covariance: non-positive trace "
            f"{float(np.trace(m)):.3e} with a non-zero matrix"
        )
    last: Exception | None = None
    for _ in range(3):
        try:
            return cholesky(m + eps * np.eye(dim))
        except NotPositiveDefiniteError as exc:
            last = exc
            eps *= 100.0
    raise NumericalError(
        f"Cholesky failed after jitter retries (final eps={eps:.3e}): {last}"
    )


def solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b by partially pivoted LU with residual verification.

    Raises SingularSystemError when a pivot falls below 1e-14 * max|a| or
    when the residual stays above 1e-8 * (1 + ||b||_inf) after iterative
    refinement.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise InvalidInputError(f"rhs length {b.shape[0]} != system size {a.shape[0]}")
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        raise SingularSystemError("zero matrix")
    lu, piv = lu_factor(a, check_finite=False)
    min_pivot = float(np.min(np.abs(np.diag(lu))))
    if min_pivot <= _PIVOT_RTOL * scale:
        raise SingularSystemError(
            f"pivot {min_pivot:.3e} below tolerance {_PIVOT_RTOL * scale:.3e}"
        )
    x = lu_solve((lu, piv), b, check_finite=False)
    tol = _RESIDUAL_RTOL * (1.0 + float(np.max(np.abs(b))) if b.size else 1.0)
    for _ in range(2):
        r = b - a @ x
        if float(np.max(np.abs(r))) <= tol:
            return x
        x = x + lu_solve((lu, piv), r, check_finite=False)
    r = b - a @ x
    resid = float(np.max(np.abs(r)))
    if resid > tol:
        raise SingularSystemError(
            f"residual {resid:.3e} exceeds tolerance {tol:.3e} after refinement"
        )
    return x


def norm_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-float(x) / _SQRT2)


def _norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_2PI


# Rational approximation coefficients for the initial quantile guess
# (Acklam's minimax fit, |relative error| < 1.15e-9 on (0,1)).
_QA = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
       1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_QB = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
       6.680131188771972e+01, -1.328068155288572e+01)
_QC = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
       -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_QD = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
       3.754408661907416e+00)
_Q_LOW = 0.02425


def norm_quantile(p: float) -> float:
    """Inverse standard normal CDF.

    Rational initial guess refined by one Halley step against norm_cdf;
    absolute error is well below 1e-9 over (0, 1).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"quantile probability must be in (0, 1), got {p}")
    if p < _Q_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_QC[0] * q + _QC[1]) * q + _QC[2]) * q + _QC[3]) * q + _QC[4]) * q + _QC[5]) / \
            ((((_QD[0] * q + _QD[1]) * q + _QD[2]) * q + _QD[3]) * q + 1.0)
    elif p <= 1.0 - _Q_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_QA[0] * r + _QA[1]) * r + _QA[2]) * r + _QA[3]) * r + _QA[4]) * r + _QA[5]) * q / \
            (((((_QB[0] * r + _QB[1]) * r + _QB[2]) * r + _QB[3]) * r + _QB[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((_QC[0] * q + _QC[1]) * q + _QC[2]) * q + _QC[3]) * q + _QC[4]) * q + _QC[5]) / \
            ((((_QD[0] * q + _QD[1]) * q + _QD[2]) * q + _QD[3]) * q + 1.0)
    # Halley refinement against the high-accuracy CDF.
    err = norm_cdf(x) - p
    pdf = _norm_pdf(x)
    if pdf > 0.0:
        u = err / pdf
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def log_choose(n: int, k: int) -> float:
    """log of the binomial coefficient C(n, k)."""
    if k < 0 or k > n:
        raise InvalidInputError(f"log_choose needs 0 <= k <= n, got n={n}, k={k}")
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def binomial_tail_leq(n: int, m: int, p: float) -> float:
    """P(X <= m) for X ~ Binomial(n, p).

    Terms are evaluated in log space and summed with fsum so the result
    stays accurate (abs error <= 1e-12) up to n ~ 1e6.
    """
    n = int(n)
    m = int(m)
    p = float(p)
    if n < 0 or m < 0 or m > n:
        raise InvalidInputError(f"binomial tail needs 0 <= m <= n, got n={n}, m={m}")
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"probability must be in [0, 1], got {p}")
    if m == n:
        return 1.0
    if p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0
    i = np.arange(m + 1)
    log_terms = (
        gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
        + i * math.log(p) + (n - i) * math.log1p(-p)
    )
    total = math.fsum(np.exp(log_terms))
    return min(1.0, total)


def binomial_lower_confidence(successes: int, trials: int, confidence: float) -> float:
    """One-sided exact (Clopper-Pearson) lower bound for a binomial proportion.

    Returns the p solving P(Binomial(trials, p) >= successes) = 1 - confidence,
    i.e. the largest p that the observed count would reject upward at the
    given one-sided level. successes = 0 returns 0.
    """
    successes = int(successes)
    trials = int(trials)
    confidence = float(confidence)
    if trials <= 0:
        raise InvalidInputError(f"trials must be positive, got {trials}")
    if not 0 <= successes <= trials:
        raise InvalidInputError(
            f"successes must be in [0, trials], got {successes}/{trials}"
        )
    if not 0.0 < confidence < 1.0:
        raise InvalidInputError(f"confidence must be in (0, 1), got {confidence}")
    if successes == 0:
        return 0.0
    if successes == trials:
        return float((1.0 - confidence) ** (1.0 / trials))
    return float(betaincinv(successes, trials - successes + 1, 1.0 - confidence))
