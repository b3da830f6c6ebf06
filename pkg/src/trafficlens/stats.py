"""Statistics used by the estimator and the validation reports.

Correlations with inference, a dependent-correlation z-test, OLS with
heteroscedasticity-consistent (sandwich) standard errors, and PCA on top of a
cyclic Jacobi eigensolver. Tail probabilities come from the regularized
incomplete beta function and erfc in ``scipy.special``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special
import scipy.stats

from trafficlens.errors import (
    InputValidationError,
    NumericError,
    RankDeficientError,
    UndefinedCorrelationError,
)

RANK_TOL = 1e-10
JACOBI_TOL = 1e-12


# --------------------------------------------------------------------------
# tail probabilities


def normal_sf(z):
    """Upper tail of the standard normal, ``P(Z > z)``."""
    out = 0.5 * scipy.special.erfc(np.asarray(z, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def student_t_sf(t, df):
    """Upper tail ``P(T > t)`` of Student's t with ``df`` degrees of freedom."""
    t = np.asarray(t, dtype=float)
    df = np.asarray(df, dtype=float)
    if np.any(df <= 0):
        raise InputValidationError("degrees of freedom must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        x = df / (df + t * t)
    half = 0.5 * scipy.special.betainc(df / 2.0, 0.5, x)
    half = np.where(np.isinf(t), 0.0, half)
    out = np.where(t > 0, half, 1.0 - half)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# correlation


def _constant(a: np.ndarray) -> bool:
    return bool(np.all(a == a[0]))


def pearson(x, y) -> float:
    """Sample Pearson correlation of two equal-length vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputValidationError("pearson needs two 1-d vectors of equal length")
    if len(x) < 3:
        raise InputValidationError("pearson needs at least 3 observations")
    if _constant(x) or _constant(y):
        raise UndefinedCorrelationError("correlation undefined for a zero-variance series")
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(dx @ dy / math.sqrt((dx @ dx) * (dy @ dy)))
    return min(1.0, max(-1.0, r))


def pearson_rows(X, Y) -> np.ndarray:
    """Row-wise Pearson correlation of two (m, n) arrays; NaN for constant rows."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 2:
        raise InputValidationError("pearson_rows needs two 2-d arrays of equal shape")
    if X.shape[1] < 3:
        raise InputValidationError("pearson needs at least 3 observations")
    dx = X - X.mean(axis=1, keepdims=True)
    dy = Y - Y.mean(axis=1, keepdims=True)
    num = np.einsum("ij,ij->i", dx, dy)
    den = np.sqrt(np.einsum("ij,ij->i", dx, dx) * np.einsum("ij,ij->i", dy, dy))
    undefined = np.all(X == X[:, :1], axis=1) | np.all(Y == Y[:, :1], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.clip(num / den, -1.0, 1.0)
    r[undefined] = np.nan
    return r


def average_ranks(x) -> np.ndarray:
    """Ranks starting at 1, ties sharing their mean rank."""
    return scipy.stats.rankdata(np.asarray(x, dtype=float), method="average")


def correlation_p_value(r: float, n: int) -> float:
    """Two-sided p for H0: rho = 0 via ``t = r sqrt((n-2)/(1-r^2))``."""
    if n < 3:
        raise InputValidationError("need at least 3 observations")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return min(1.0, 2.0 * student_t_sf(abs(t), n - 2))


def spearman(x, y) -> tuple[float, float]:
    """Spearman's rank correlation (average ranks for ties) and its two-sided p."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputValidationError("spearman needs two 1-d vectors of equal length")
    if len(x) < 3:
        raise InputValidationError("spearman needs at least 3 observations")
    if _constant(x) or _constant(y):
        raise UndefinedCorrelationError("spearman undefined when all values are equal")
    r = pearson(average_ranks(x), average_ranks(y))
    return r, correlation_p_value(r, len(x))


@dataclass(frozen=True)
class CorrTestResult:
    r1: float
    r2: float
    r12: float
    n: int
    z: float
    p: float
    alternative: str = "two-sided"


def dependent_corr_z(r1, r2, r12, n, alternative: str = "two-sided") -> CorrTestResult:
    """Compare two correlations sharing one variable (Meng, Rosenthal & Rubin, 1992).

    ``r1`` and ``r2`` correlate two predictors with the same criterion, ``r12``
    correlates the predictors with each other. ``alternative`` is
    ``"two-sided"`` or ``"greater"`` (H1: r1 > r2).
    """
    for name, r in (("r1", r1), ("r2", r2), ("r12", r12)):
        if not -1.0 < r < 1.0:
            raise NumericError(f"{name}={r!r} must lie strictly inside (-1, 1)")
    if n <= 3:
        raise InputValidationError("dependent correlation test needs n > 3")
    rbar2 = (r1 * r1 + r2 * r2) / 2.0
    f = min(1.0, (1.0 - r12) / (2.0 * (1.0 - rbar2)))
    h = (1.0 - f * rbar2) / (1.0 - rbar2)
    z = (math.atanh(r1) - math.atanh(r2)) * math.sqrt((n - 3) / (2.0 * (1.0 - r12) * h))
    if alternative == "two-sided":
        p = min(1.0, 2.0 * normal_sf(abs(z)))
    elif alternative == "greater":
        p = normal_sf(z)
    else:
        raise InputValidationError(f"unknown alternative {alternative!r}")
    return CorrTestResult(float(r1), float(r2), float(r12), int(n), z, p, alternative)


# --------------------------------------------------------------------------
# regression


@dataclass(frozen=True)
class RegressionResult:
    names: tuple
    coef: np.ndarray
    se_robust: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r2: float
    adj_r2: float
    n: int
    p: int
    hc_type: str
    cov: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)

    def row(self, name: str) -> dict:
        i = self.names.index(name)
        return {
            "coef": float(self.coef[i]),
            "se": float(self.se_robust[i]),
            "t": float(self.t_stats[i]),
            "p": float(self.p_values[i]),
        }


def _dependent_columns(X: np.ndarray, tol: float) -> list[int]:
    """Columns lying in the span of the columns before them."""
    _, R = np.linalg.qr(X, mode="reduced")
    return [j for j in range(X.shape[1]) if abs(R[j, j]) <= tol]


def ols_hc(X, y, intercept: bool = True, hc_type: str = "HC1", names=None) -> RegressionResult:
    """Least squares fit with HC0/HC1 sandwich standard errors."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise InputValidationError("X must be (n, p) and y length n")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputValidationError("X and y must be finite")
    if hc_type not in ("HC0", "HC1"):
        raise InputValidationError(f"unknown hc_type {hc_type!r}")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise InputValidationError("names do not match the columns of X")
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["const", *names]
    n, p = X.shape
    if n <= p:
        raise InputValidationError(f"need more observations than parameters (n={n}, p={p})")

    tol = RANK_TOL * float(np.max(np.linalg.norm(X, axis=0)))
    _, R_piv, _ = scipy.linalg.qr(X, mode="economic", pivoting=True)
    rank = int(np.sum(np.abs(np.diag(R_piv)) > tol))
    if rank < p:
        bad = [names[j] for j in _dependent_columns(X, tol)] or ["<unknown>"]
        raise RankDeficientError(
            f"design matrix is rank deficient (rank {rank} < {p}); collinear column(s): {', '.join(bad)}",
            bad,
        )

    Q, R = scipy.linalg.qr(X, mode="economic")
    coef = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ coef
    # (X'X)^-1 X' diag(e^2) X (X'X)^-1 == A A' with A = R^-1 (Q * e)'
    A = scipy.linalg.solve_triangular(R, (Q * resid[:, None]).T)
    cov = A @ A.T
    if hc_type == "HC1":
        cov = cov * (n / (n - p))
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    pvals = np.where(np.isnan(t), np.nan, 2.0 * student_t_sf(np.abs(t), n - p))

    ssr = float(resid @ resid)
    yc = y - y.mean()
    sst = float(yc @ yc)
    r2 = 1.0 - ssr / sst if sst > 0 else (1.0 if ssr == 0 else 0.0)
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - p)
    return RegressionResult(
        tuple(names), coef, se, t, np.asarray(pvals, dtype=float),
        r2, adj, n, p, hc_type, cov, resid,
    )


def significance_stars(p: float) -> str:
    if not p == p:
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


# --------------------------------------------------------------------------
# eigen / PCA


def jacobi_eigh(A, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors (columns) of a symmetric matrix by cyclic Jacobi.

    Sweeps stop once the off-diagonal Frobenius norm is at most ``tol`` times
    the norm of the whole matrix. Output is unsorted.
    """
    a = np.array(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputValidationError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(a).max(initial=0.0))):
        raise InputValidationError("jacobi_eigh needs a symmetric matrix")
    a = (a + a.T) / 2.0
    m = a.shape[0]
    V = np.eye(m)
    scale = np.linalg.norm(a)
    offdiag = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps):
        if np.linalg.norm(a[offdiag]) <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff  # small-angle limit, avoids overflow in theta
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                a[:, p] = c * col_p - s * a[:, q]
                a[:, q] = s * col_p + c * a[:, q]
                row_p = a[p, :].copy()
                a[p, :] = c * row_p - s * a[q, :]
                a[q, :] = s * row_p + c * a[q, :]
                a[p, q] = a[q, p] = 0.0
                v_p = V[:, p].copy()
                V[:, p] = c * v_p - s * V[:, q]
                V[:, q] = s * v_p + c * V[:, q]
    else:
        raise NumericError("Jacobi eigensolver did not converge")
    return np.diag(a).copy(), V


@dataclass(frozen=True)
class PcaResult:
    loadings: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    standardized: bool

    def transform(self, M) -> np.ndarray:
        return ((np.asarray(M, dtype=float) - self.mean) / self.scale) @ self.loadings


def pca(M, k: int | None = None, standardize: bool = False, names=None) -> PcaResult:
    """Principal components of the columns of ``M`` (observations in rows).

    With ``standardize`` the correlation matrix is decomposed instead of the
    covariance matrix. Each loading vector is signed so that its
    largest-magnitude entry is positive.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InputValidationError("pca needs a 2-d matrix")
    n, v = M.shape
    if n < 2:
        raise InputValidationError("pca needs at least 2 observations")
    k = v if k is None else int(k)
    if not 1 <= k <= v:
        raise InputValidationError(f"k={k} must lie in [1, {v}]")
    mean = M.mean(axis=0)
    Z = M - mean
    if standardize:
        constant = [j for j in range(v) if np.all(M[:, j] == M[0, j])]
        if constant:
            labels = [str(names[j]) if names is not None else str(j) for j in constant]
            raise NumericError(f"zero-variance column(s) cannot be standardized: {', '.join(labels)}")
        scale = Z.std(axis=0, ddof=1)
        Z = Z / scale
    else:
        scale = np.ones(v)
    C = Z.T @ Z / (n - 1)
    evals, evecs = jacobi_eigh(C)
    order = sorted(range(v), key=lambda j: (-evals[j], j))
    evals = evals[order]
    evecs = evecs[:, order]
    for j in range(v):
        i = int(np.argmax(np.abs(evecs[:, j])))
        if evecs[i, j] < 0:
            evecs[:, j] = -evecs[:, j]
    total = float(np.sum(evals))
    loadings = evecs[:, :k]
    ratio = evals[:k] / total if total > 0 else np.zeros(k)
    return PcaResult(
        loadings=loadings,
        explained_variance=evals[:k].copy(),
        explained_variance_ratio=ratio,
        eigenvalues=evals,
        scores=Z @ loadings,
        mean=mean,
        scale=scale,
        standardized=standardize,
    )


# --------------------------------------------------------------------------
# transforms


def log_per_1000(value, pop):
    """``ln(value / pop * 1000)``; NaN (missing) where value <= 0 or pop <= 0."""
    value = np.asarray(value, dtype=float)
    pop = np.asarray(pop, dtype=float)
    ok = (value > 0) & (pop > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(ok, np.log(np.where(ok, value, 1.0) / np.where(ok, pop, 1.0) * 1000.0), np.nan)
    return float(out) if np.ndim(out) == 0 else out
