"""Response-probability fitters: logistic, robit(1), and boosted trees.

All three return a :class:`PropensityFit` whose probabilities are strictly
inside (0,1) — clamping happens only where the link is evaluated, never as a
post-hoc trim of the weights.  The boosted fitter picks its iteration count
by minimizing the largest marginal weighted Kolmogorov–Smirnov statistic
over a coarse-to-fine grid of candidate tree counts.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .boost import fit_boosted_model, probability_from_score
from .linear import CollinearColumnsError, fit_least_squares_array
from .weighting import BalanceSpec, MarginalKsEvaluator, compute_weights

LOGISTIC = "logistic"
ROBIT1 = "robit1"
GBM = "gbm"

_ETA_CAP = 30.0
_LINK_CLIP = 1e-12


@dataclass(frozen=True)
class GbmParams:
    """Boosting settings; the two named profiles differ only in budget."""

    max_trees: int = 10000
    shrinkage: float = 0.005
    max_depth: int = 3
    min_node: int = 10

    def __post_init__(self):
        if self.max_trees < 0:
            raise ValueError("max_trees must be nonnegative")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_node < 1:
            raise ValueError("min_node must be at least 1")

    @staticmethod
    def full_profile():
        return GbmParams(max_trees=10000, shrinkage=0.005)

    @staticmethod
    def desk_profile():
        return GbmParams(max_trees=3000, shrinkage=0.01)


@dataclass
class PropensityFit:
    """Fitted response probabilities plus fitter diagnostics."""

    pi_hat: np.ndarray
    method: str
    covariate_set: str
    converged: bool
    coefficients: np.ndarray | None = None
    chosen_iterations: int | None = None
    achieved_max_ks: float | None = None
    evaluated_ks: dict = field(default_factory=dict)
    message: str = ""

    def __post_init__(self):
        pi = np.asarray(self.pi_hat, dtype=np.float64)
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise ValueError("pi_hat must be strictly inside (0, 1)")
        if self.method not in (LOGISTIC, ROBIT1, GBM):
            raise ValueError(f"unknown method {self.method!r}")


def _clamped_expit(eta):
    p = 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CAP, _ETA_CAP)))
    return np.clip(p, _LINK_CLIP, 1.0 - _LINK_CLIP)


def _check_two_classes(t):
    t = np.asarray(t)
    if t.ndim != 1 or not np.all((t == 0) | (t == 1)):
        raise ValueError("t must be a vector of 0/1 indicators")
    if t.min() == t.max():
        raise ValueError("t must contain both classes")
    return t.astype(np.float64)


def fit_logistic(design, t, max_iter=100, coef_tol=1e-8, score_tol=1e-8):
    """Maximum-likelihood logistic regression by IRLS.

    Separation is not an error: the linear predictor is capped at +-30 so
    arithmetic stays finite, the fit is returned with ``converged=False``,
    and the resulting near-0/1 probabilities are passed through untrimmed.
    """
    X = design.values
    tvec = _check_two_classes(t)
    n, p = X.shape
    beta = np.zeros(p)
    converged = False
    message = ""
    for _ in range(max_iter):
        eta = np.clip(X @ beta, -_ETA_CAP, _ETA_CAP)
        pi = _clamped_expit(eta)
        score = X.T @ (tvec - pi)
        if np.max(np.abs(score)) < score_tol:
            converged = True
            break
        w = pi * (1.0 - pi)
        z = eta + (tvec - pi) / w
        try:
            beta_new = fit_least_squares_array(X, z, weights=w)
        except CollinearColumnsError as exc:
            message = f"working weighted system became rank deficient: {exc}"
            converged = False
            break
        delta = np.max(np.abs(beta_new - beta))
        beta = beta_new
        if np.max(np.abs(beta)) > 1e6:
            message = "coefficients diverging; separation suspected"
            converged = False
            break
        if delta < coef_tol:
            # Keep polishing toward the score criterion; the flag is earned.
            converged = True
    else:
        if not converged:
            message = "IRLS reached max_iter without meeting either tolerance"
    if converged and np.max(np.abs(X @ beta)) >= _ETA_CAP:
        # The score only vanished because the capped link pinned some
        # probabilities at the boundary; without the cap the coefficients
        # would keep growing.  That is separation, not convergence.
        converged = False
        message = "linear predictor reached the cap; separation suspected"
    pi_hat = _clamped_expit(X @ beta)
    return PropensityFit(
        pi_hat=pi_hat,
        method=LOGISTIC,
        covariate_set=design.covariate_set,
        converged=converged,
        coefficients=beta,
        message=message,
    )


def robit1_cdf(eta):
    """CDF of the Student-t distribution with 1 degree of freedom."""
    return 0.5 + np.arctan(eta) / math.pi


def _robit_loglik(X, tvec, beta):
    F = np.clip(robit1_cdf(X @ beta), _LINK_CLIP, 1.0 - _LINK_CLIP)
    return float(np.sum(tvec * np.log(F) + (1.0 - tvec) * np.log1p(-F)))


def robit1_loglik_gradient(X, tvec, beta):
    eta = X @ beta
    F = np.clip(robit1_cdf(eta), _LINK_CLIP, 1.0 - _LINK_CLIP)
    f = 1.0 / (math.pi * (1.0 + eta * eta))
    return X.T @ ((tvec - F) * f / (F * (1.0 - F)))


def fit_robit1(design, t, max_iter=200, grad_tol=1e-6):
    """Binary regression with the Cauchy CDF link, by damped Fisher scoring.

    Started from half the logistic coefficients; each Fisher step is solved
    as a weighted least-squares problem and halved until the log-likelihood
    does not decrease.  Non-convergence keeps the best iterate.
    """
    X = design.values
    tvec = _check_two_classes(t)
    logistic = fit_logistic(design, t)
    beta = 0.5 * logistic.coefficients
    loglik = _robit_loglik(X, tvec, beta)
    converged = False
    message = ""
    for _ in range(max_iter):
        eta = X @ beta
        F = np.clip(robit1_cdf(eta), _LINK_CLIP, 1.0 - _LINK_CLIP)
        f = 1.0 / (math.pi * (1.0 + eta * eta))
        grad = X.T @ ((tvec - F) * f / (F * (1.0 - F)))
        if np.max(np.abs(grad)) < grad_tol:
            converged = True
            break
        w = f * f / (F * (1.0 - F))
        z = eta + (tvec - F) / f
        try:
            target = fit_least_squares_array(X, z, weights=w)
        except CollinearColumnsError as exc:
            message = f"Fisher-scoring system became rank deficient: {exc}"
            break
        step = target - beta
        accepted = False
        for _ in range(30):
            cand = beta + step
            cand_loglik = _robit_loglik(X, tvec, cand)
            if cand_loglik >= loglik:
                beta = cand
                loglik = cand_loglik
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            message = "no ascent step found; keeping best iterate"
            break
    else:
        message = "Fisher scoring reached max_iter"
    if not converged:
        converged = np.max(np.abs(robit1_loglik_gradient(X, tvec, beta))) \
            < grad_tol
    pi_hat = np.clip(robit1_cdf(X @ beta), _LINK_CLIP, 1.0 - _LINK_CLIP)
    return PropensityFit(
        pi_hat=pi_hat,
        method=ROBIT1,
        covariate_set=design.covariate_set,
        converged=converged,
        coefficients=beta,
        message=message,
    )


def _argmin_smallest(evaluated, candidates):
    best_k = None
    best_v = math.inf
    for k in candidates:
        v = evaluated[k]
        if v < best_v:
            best_v = v
            best_k = k
    return best_k


def fit_gbm(covariates, t, params, balance):
    """Boost trees on the response indicator, then pick the tree count that
    best balances the four covariate margins.

    Candidate counts are every 100th iteration, then every 10th within 100
    of the incumbent, then every single count within 10.  Ties go to the
    smallest count.  Returns the full model plus the fit at the chosen
    count.
    """
    X = np.ascontiguousarray(covariates, dtype=np.float64)
    tvec = _check_two_classes(t)
    t_int = tvec.astype(np.int64)
    labels = tuple(
        f"{balance.covariate_set.lower()}{j + 1}" for j in range(X.shape[1]))
    model = fit_boosted_model(
        X, tvec, params.max_trees, params.shrinkage,
        max_depth=params.max_depth, min_node=params.min_node,
        covariate_labels=labels)

    evaluator = MarginalKsEvaluator(
        X, t_int, scheme=balance.scheme, reference=balance.reference)
    evaluated = {}

    def ks_at(k):
        if k not in evaluated:
            pi_k = probability_from_score(model.score_path[k])
            wv = compute_weights(pi_k, t_int, balance.scheme)
            evaluated[k] = evaluator(wv.weights)
        return evaluated[k]

    top = params.max_trees
    coarse = list(range(0, top + 1, 100))
    if coarse[-1] != top:
        coarse.append(top)
    for k in coarse:
        ks_at(k)
    incumbent = _argmin_smallest(evaluated, coarse)
    for k in range(max(0, incumbent - 100), min(top, incumbent + 100) + 1, 10):
        ks_at(k)
    incumbent = _argmin_smallest(evaluated, sorted(evaluated))
    for k in range(max(0, incumbent - 10), min(top, incumbent + 10) + 1):
        ks_at(k)
    chosen = _argmin_smallest(evaluated, sorted(evaluated))

    fit = PropensityFit(
        pi_hat=probability_from_score(model.score_path[chosen]),
        method=GBM,
        covariate_set=balance.covariate_set,
        converged=True,
        chosen_iterations=chosen,
        achieved_max_ks=evaluated[chosen],
        evaluated_ks=dict(evaluated),
    )
    return model, fit
