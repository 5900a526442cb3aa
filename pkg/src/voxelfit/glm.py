"""Weighted exponential-family regression by iteratively reweighted least squares.

Only the two families the estimators need are supported: ``poisson`` (with
the log link) and ``binomial`` (with any of the binomial links of
:mod:`voxelfit.links`).  The linear predictor of row ``i`` is
``offset_i + x_i @ beta`` and the objective is the prior-weighted
log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .exceptions import SingularDesignError
from .links import LinkFunction

FAMILIES = ("poisson", "binomial")


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    """Design, response, weights, offsets, family and link of one GLM fit.

    ``source_rows`` optionally records, for every regression row, the index
    of the voxel-table cell it was built from.
    """

    design: np.ndarray
    response: np.ndarray
    prior_weights: np.ndarray
    offsets: np.ndarray
    family: str
    link: LinkFunction
    source_rows: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.design, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.response, dtype=np.float64)
        w = np.asarray(self.prior_weights, dtype=np.float64)
        o = np.asarray(self.offsets, dtype=np.float64)
        n = X.shape[0]
        for name, arr in (("response", y), ("prior_weights", w), ("offsets", o)):
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "poisson":
            if self.link.kind != "log":
                raise ValueError("the poisson family only supports the log link")
            if np.any(y < 0) or np.any(y != np.round(y)):
                raise ValueError("poisson responses must be nonnegative integers")
        else:
            if not self.link.is_binomial:
                raise ValueError(f"link {self.link} is not a binomial link")
            if np.any((y != 0) & (y != 1)):
                raise ValueError("binomial responses must be 0 or 1")
        if np.any(~(w > 0)):
            raise ValueError("prior weights must be positive")
        if not np.all(np.isfinite(o)):
            raise ValueError("offsets must be finite")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "prior_weights", w)
        object.__setattr__(self, "offsets", o)
        if self.source_rows is not None:
            object.__setattr__(self, "source_rows", np.asarray(self.source_rows))

    @property
    def n_rows(self) -> int:
        return self.design.shape[0]

    @property
    def n_coef(self) -> int:
        return self.design.shape[1]

    def degenerate_reason(self) -> str | None:
        """Why the MLE cannot exist for this problem, or None."""
        if self.n_rows == 0:
            return "no rows"
        if not np.any(self.response > 0):
            return "no positive responses"
        if self.family == "binomial" and np.all(self.response == 1):
            return "no negative responses"
        return None

    def same_as(self, other: "RegressionProblem") -> bool:
        """Exact equality of rows, response, weights, offsets, family and link."""
        return (
            self.family == other.family
            and self.link == other.link
            and np.array_equal(self.design, other.design)
            and np.array_equal(self.response, other.response)
            and np.array_equal(self.prior_weights, other.prior_weights)
            and np.array_equal(self.offsets, other.offsets)
        )


@dataclass(frozen=True)
class IRLSConfig:
    max_iter: int = 50
    score_tol: float = 1e-8
    step_halving_max: int = 10
    ridge: float = 0.0
    divergence_bound: float = 30.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.score_tol > 0:
            raise ValueError("score_tol must be > 0")
        if self.step_halving_max < 0:
            raise ValueError("step_halving_max must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`irls_fit`.

    ``max_abs_score`` is the infinity norm of the score at ``coefficients``
    divided by the total prior weight, the quantity compared to
    ``score_tol``.
    """

    coefficients: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    max_abs_score: float
    diverged: bool = False
    saturated: bool = False
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)


def linear_predictor(problem: RegressionProblem, beta) -> np.ndarray:
    return problem.offsets + problem.design @ np.asarray(beta, dtype=np.float64)


def _loglik_terms(problem: RegressionProblem, eta: np.ndarray) -> np.ndarray:
    y = problem.response
    if problem.family == "poisson":
        return y * eta - np.exp(eta) - gammaln(y + 1.0)
    link = problem.link
    return np.where(y > 0, link.log_mean(eta), link.log1m_mean(eta))


def loglik(problem: RegressionProblem, beta) -> float:
    eta = linear_predictor(problem, beta)
    with np.errstate(over="ignore"):
        return float(problem.prior_weights @ _loglik_terms(problem, eta))


def _score_parts(problem: RegressionProblem, eta: np.ndarray):
    """Per-row score multiplier ``w (y - mu) mu'/V`` and Fisher weight ``w mu'^2/V``."""
    link = problem.link
    mu = np.atleast_1d(link.invert(eta))
    factor = np.atleast_1d(link.score_factor(eta))
    dmu = np.atleast_1d(link.mean_derivative(eta))
    w = problem.prior_weights
    return w * (problem.response - mu) * factor, w * dmu * factor


def loglik_and_score(problem: RegressionProblem, beta) -> tuple[float, np.ndarray]:
    """Weighted log-likelihood and its gradient with respect to ``beta``."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (problem.n_coef,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({problem.n_coef},)")
    eta = linear_predictor(problem, beta)
    with np.errstate(over="ignore"):
        ll = float(problem.prior_weights @ _loglik_terms(problem, eta))
        u, _ = _score_parts(problem, eta)
    return ll, problem.design.T @ u


def _initial_coefficients(problem: RegressionProblem, ridge: float) -> np.ndarray:
    # one weighted least-squares step from a data-derived starting mean
    y, w, link = problem.response, problem.prior_weights, problem.link
    if problem.family == "poisson":
        mu0 = y + 0.1
    else:
        mu0 = (w * y + 0.5) / (w + 1.0)
    eta0 = np.atleast_1d(link.apply(mu0))
    dmu = np.atleast_1d(link.mean_derivative(eta0))
    dmu = np.maximum(dmu, 1e-300)
    var = mu0 if problem.family == "poisson" else mu0 * (1.0 - mu0)
    W = w * dmu**2 / var
    z = eta0 - problem.offsets + (y - mu0) / dmu
    X = problem.design
    A = X.T @ (W[:, None] * X)
    if ridge:
        A = A + ridge * np.eye(X.shape[1])
    return _solve(A, X.T @ (W * z))


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"singular weighted least-squares system: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise SingularDesignError("weighted least-squares step is not finite")
    return x


def _polish(problem, beta, ll, u, W, max_score, ridge_eye, scale):
    # One more scoring step once inside tolerance.  Convergence is quadratic
    # there, so this buys the last digits of beta at the cost of one solve;
    # it is kept only if it does not worsen the score or the loglik.
    X = problem.design
    A = X.T @ (W[:, None] * X)
    if ridge_eye is not None:
        A = A + ridge_eye
    try:
        cand = beta + _solve(A, X.T @ u)
    except SingularDesignError:
        return beta, ll, max_score
    ll_cand = loglik(problem, cand)
    _, score = loglik_and_score(problem, cand)
    s = float(np.max(np.abs(score))) / scale
    slack = 64 * np.finfo(float).eps * (abs(ll) + scale)
    if np.isfinite(ll_cand) and ll_cand >= ll - slack and s <= max_score:
        return cand, ll_cand, s
    return beta, ll, max_score


def irls_fit(problem: RegressionProblem, config: IRLSConfig | None = None,
             start=None) -> FitResult:
    """Maximize the weighted log-likelihood of ``problem`` by Fisher scoring.

    Each iteration solves ``(X' W X + ridge I) step = score`` and halves the
    step until the log-likelihood does not decrease (up to rounding).  The
    fit stops when ``max|score| / sum(prior_weights) <= score_tol``.
    Non-convergence is reported through the result, not raised; the only
    exception is a singular system when ``ridge == 0``.
    """
    cfg = config or IRLSConfig()
    X = problem.design
    p = problem.n_coef
    if cfg.ridge == 0 and np.linalg.matrix_rank(X) < p:
        raise SingularDesignError(
            f"design of rank {np.linalg.matrix_rank(X)} < {p} columns; supply ridge > 0"
        )
    scale = float(problem.prior_weights.sum())
    ridge_eye = cfg.ridge * np.eye(p) if cfg.ridge else None

    beta = (np.asarray(start, dtype=np.float64).copy() if start is not None
            else _initial_coefficients(problem, cfg.ridge))
    ll = loglik(problem, beta)
    if not np.isfinite(ll):
        beta = np.zeros(p)
        ll = loglik(problem, beta)
    trace = [ll]
    converged = diverged = False
    iterations = 0
    max_score = np.inf

    with np.errstate(over="ignore", under="ignore"):
        while True:
            eta = linear_predictor(problem, beta)
            u, W = _score_parts(problem, eta)
            score = X.T @ u
            max_score = float(np.max(np.abs(score))) / scale
            if max_score <= cfg.score_tol:
                converged = True
                beta, ll, max_score = _polish(problem, beta, ll, u, W, max_score, ridge_eye, scale)
                trace.append(ll)
                break
            if np.max(np.abs(beta)) > cfg.divergence_bound:
                diverged = True
                break
            if iterations >= cfg.max_iter:
                break
            iterations += 1
            A = X.T @ (W[:, None] * X)
            if ridge_eye is not None:
                A = A + ridge_eye
            step = _solve(A, score)
            slack = 64 * np.finfo(float).eps * (abs(ll) + scale)
            t = 1.0
            for _ in range(cfg.step_halving_max + 1):
                cand = beta + t * step
                ll_cand = loglik(problem, cand)
                if np.isfinite(ll_cand) and ll_cand >= ll - slack:
                    break
                t *= 0.5
            else:
                # no acceptable step: stop at the current, best point
                break
            beta, ll = cand, ll_cand
            trace.append(ll)

    saturated = bool(np.any(problem.link.saturated(linear_predictor(problem, beta))))
    return FitResult(
        coefficients=beta,
        loglik=ll,
        iterations=iterations,
        converged=converged,
        max_abs_score=max_score,
        diverged=diverged,
        saturated=saturated,
        loglik_trace=tuple(trace),
    )


def fitted_means(problem: RegressionProblem, beta) -> np.ndarray:
    return np.atleast_1d(problem.link.invert(linear_predictor(problem, beta)))
