"""Nonresponse weights and weighted covariate-balance statistics.

Two weighting schemes are supported: POP reweights respondents to represent
the whole sample (weight 1/pi), NR reweights them to represent only the
nonrespondents (weight (1-pi)/pi, computed as 1/pi - 1 so that the POP-NR
difference is exactly 1 per respondent).  Balance is measured by the largest
marginal Kolmogorov-Smirnov statistic between the weighted respondent
distribution and a reference sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("POP", "NR")
BALANCE_REFERENCES = ("default", "respondents_vs_nonrespondents")


@dataclass(frozen=True)
class WeightVector:
    """Per-unit nonnegative weights; zero on nonrespondents by convention."""

    weights: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if not np.any(self.weights > 0):
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class BalanceSpec:
    """Which scheme's weights to balance, on which covariate matrix."""

    scheme: str
    covariate_set: str = "X"
    reference: str = "default"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.reference not in BALANCE_REFERENCES:
            raise ValueError(f"unknown balance reference {self.reference!r}")


def compute_weights(pi_hat: np.ndarray, t: np.ndarray, scheme: str,
                    cap: float | None = None) -> WeightVector:
    """Build scheme weights from estimated response probabilities.

    Respondents get 1/pi (POP) or 1/pi - 1 (NR); nonrespondents get 0.
    ``cap`` truncates weights from above (off for all table reproductions).
    """
    pi_hat = np.asarray(pi_hat, dtype=float)
    t = np.asarray(t)
    if np.any(pi_hat <= 0.0) or np.any(pi_hat >= 1.0):
        raise ValueError("pi_hat must lie strictly inside (0, 1)")
    w = np.zeros(pi_hat.shape[0])
    resp = t == 1
    inv = 1.0 / pi_hat[resp]
    if scheme == "POP":
        w[resp] = inv
    elif scheme == "NR":
        w[resp] = inv - 1.0
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if cap is not None:
        if cap <= 1.0:
            raise ValueError("weight cap must exceed 1")
        w = np.minimum(w, cap)
    return WeightVector(weights=w, scheme=scheme)


def _cdf_pieces(values: np.ndarray, weights: np.ndarray):
    """Stable sort order, sorted values, and zero-padded weight cumsum."""
    order = np.argsort(values, kind="stable")
    sv = values[order]
    cw = np.cumsum(weights[order])
    total = cw[-1]
    if not total > 0:
        raise ValueError("sample has zero total weight")
    padded = np.concatenate(([0.0], cw))
    return order, sv, padded, total


def weighted_ks(values_a, w_a, values_b, w_b) -> float:
    """Sup-distance between two weight-normalized empirical CDFs.

    Computed exactly at every pooled jump point; each side needs positive
    total weight.
    """
    values_a = np.asarray(values_a, dtype=float)
    values_b = np.asarray(values_b, dtype=float)
    w_a = np.asarray(w_a, dtype=float)
    w_b = np.asarray(w_b, dtype=float)
    if values_a.shape != w_a.shape or values_b.shape != w_b.shape:
        raise ValueError("values and weights must have matching shapes")
    if np.any(w_a < 0) or np.any(w_b < 0):
        raise ValueError("weights must be nonnegative")
    _, sa, ca, wa_tot = _cdf_pieces(values_a, w_a)
    _, sb, cb, wb_tot = _cdf_pieces(values_b, w_b)
    grid = np.concatenate([sa, sb])
    grid.sort(kind="stable")
    fa = ca[np.searchsorted(sa, grid, side="right")] / wa_tot
    fb = cb[np.searchsorted(sb, grid, side="right")] / wb_tot
    return float(np.abs(fa - fb).max())


def _reference_sample(covariates: np.ndarray, t: np.ndarray, scheme: str,
                      reference: str):
    """Rows of the comparison sample (always unit-weighted)."""
    if reference == "respondents_vs_nonrespondents" or scheme == "NR":
        return covariates[t == 0]
    return covariates  # POP, default: the full sample


def max_marginal_ks(covariates: np.ndarray, t: np.ndarray,
                    weights: WeightVector, reference: str = "default") -> float:
    """Largest per-column weighted KS between respondents and the reference.

    Respondents carry the scheme weights; the reference sample is the full
    sample (POP) or the nonrespondents (NR), unit-weighted.  The alternative
    reference compares respondents vs nonrespondents under both schemes.
    """
    covariates = np.asarray(covariates, dtype=float)
    t = np.asarray(t)
    if reference not in BALANCE_REFERENCES:
        raise ValueError(f"unknown balance reference {reference!r}")
    w = weights.weights
    if np.any(w[t == 0] != 0):
        raise ValueError("weights must be zero on nonrespondents")
    resp = t == 1
    ref = _reference_sample(covariates, t, weights.scheme, reference)
    ref_w = np.ones(ref.shape[0])
    best = 0.0
    for j in range(covariates.shape[1]):
        d = weighted_ks(covariates[resp, j], w[resp], ref[:, j], ref_w)
        if d > best:
            best = d
    return best


class MarginalKsEvaluator:
    """Repeated max_marginal_ks for fixed samples and varying weights.

    Presorts each covariate column once so that a single evaluation is O(n)
    per column, while remaining bit-identical to max_marginal_ks on the same
    inputs (same sort orders, same arithmetic).  Used by the boosted-model
    iteration search, which evaluates balance at many candidate iteration
    counts.
    """

    def __init__(self, covariates: np.ndarray, t: np.ndarray, scheme: str,
                 reference: str = "default"):
        covariates = np.asarray(covariates, dtype=float)
        t = np.asarray(t)
        if reference not in BALANCE_REFERENCES:
            raise ValueError(f"unknown balance reference {reference!r}")
        self.scheme = scheme
        self.resp = t == 1
        ref = _reference_sample(covariates, t, scheme, reference)
        ref_w = np.ones(ref.shape[0])
        self._cols = []
        for j in range(covariates.shape[1]):
            va = covariates[self.resp, j]
            order, sa, _, _ = _cdf_pieces(va, np.ones(va.shape[0]))
            _, sb, cb, wb_tot = _cdf_pieces(ref[:, j], ref_w)
            grid = np.concatenate([sa, sb])
            grid.sort(kind="stable")
            ia = np.searchsorted(sa, grid, side="right")
            fb = cb[np.searchsorted(sb, grid, side="right")] / wb_tot
            self._cols.append((order, ia, fb))

    def __call__(self, full_weights: np.ndarray) -> float:
        wr = full_weights[self.resp]
        best = 0.0
        for order, ia, fb in self._cols:
            cw = np.cumsum(wr[order])
            fa = np.concatenate(([0.0], cw))[ia] / cw[-1]
            d = float(np.abs(fa - fb).max())
            if d > best:
                best = d
        return best


def effective_sample_size(weights: WeightVector) -> float:
    """(sum w)^2 / sum w^2 over the positive weights."""
    w = weights.weights[weights.weights > 0]
    return float(w.sum() ** 2 / np.sum(w * w))
