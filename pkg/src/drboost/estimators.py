"""The five estimator families for the population mean of Y.

OLS: outcome regression on respondents, predictions averaged over everyone.
IPW: weighted respondent means under population (POP) or nonresponder (NR)
reweighting.  BC: outcome-regression mean plus inverse-probability-weighted
residual correction.  WLS: outcome regression refit with 1/pi weights.

Every estimator returns a finite value or raises; non-finite results are
surfaced as errors so the harness can count them, never recorded silently.
"""

from dataclasses import dataclass, field

import numpy as np

from .linear import DesignMatrix, LinearFit, build_design, fit_least_squares, \
    predict
from .weighting import compute_weights, effective_sample_size

FAMILIES = ("OLS", "IPW", "BC", "WLS")


class EstimateError(ValueError):
    """A requested estimate could not be produced (non-finite or invalid)."""


@dataclass(frozen=True)
class EstimatorSpec:
    """Identity of one estimator: family plus its model ingredients.

    ``ps_method``/``ps_covariates`` are metadata that callers who know the
    provenance of ``pi_hat`` fill in; the estimator functions themselves
    only see probabilities.
    """

    family: str
    ps_method: str | None = None
    ps_covariates: str | None = None
    scheme: str | None = None
    y_covariates: str | None = None
    y_interaction: bool = False
    ipw_normalized: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "OLS":
            if (self.ps_method is not None or self.ps_covariates is not None
                    or self.scheme is not None):
                raise ValueError("OLS takes no propensity fields")
            if self.y_covariates is None:
                raise ValueError("OLS requires an outcome covariate set")
        elif self.family == "IPW":
            if self.y_covariates is not None or self.y_interaction:
                raise ValueError("IPW takes no outcome-model fields")
            if self.scheme not in ("POP", "NR"):
                raise ValueError("IPW requires scheme POP or NR")
        else:
            if self.y_covariates is None:
                raise ValueError(f"{self.family} requires an outcome model")
            if self.scheme is not None:
                raise ValueError(f"{self.family} takes no weighting scheme")


@dataclass
class Estimate:
    value: float
    spec: EstimatorSpec
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise EstimateError(
                f"non-finite estimate {self.value!r} for {self.spec}")


def _finite(value, spec, diagnostics):
    return Estimate(value=float(value), spec=spec, diagnostics=diagnostics)


def _respondent_mask(dataset):
    t = dataset.t
    resp = t == 1
    if not np.any(resp):
        raise EstimateError("no respondents in dataset")
    return resp


def est_ols_mean(dataset, y_covariates, y_interaction=False):
    """Fit y on the chosen covariates over respondents; average predictions
    over all units."""
    resp = _respondent_mask(dataset)
    design_resp = build_design(dataset, y_covariates, y_interaction,
                               rows="respondents")
    fit = fit_least_squares(design_resp, dataset.y[resp])
    design_all = build_design(dataset, y_covariates, y_interaction, rows="all")
    value = float(np.mean(predict(fit, design_all)))
    spec = EstimatorSpec(family="OLS", y_covariates=y_covariates,
                         y_interaction=y_interaction)
    return _finite(value, spec, {})


def _weight_diagnostics(wv):
    return {"max_weight": float(np.max(wv.weights)),
            "ess": effective_sample_size(wv)}


def est_ipw(dataset, pi_hat, scheme, normalized=True, weight_cap=None):
    """Inverse-probability-weighted mean under POP or NR reweighting.

    POP unnormalized is the plain Horvitz-Thompson sum over n; POP
    normalized divides by the summed weights.  NR estimates the
    nonrespondent stratum mean by weighting respondents with 1/pi - 1 and
    recombines it with the observed respondent mean.
    """
    resp = _respondent_mask(dataset)
    t = dataset.t
    y = dataset.y
    n = dataset.n
    wv = compute_weights(pi_hat, t, scheme, cap=weight_cap)
    w = wv.weights
    diagnostics = _weight_diagnostics(wv)
    if scheme == "POP":
        if normalized:
            den = float(np.sum(w))
            if den == 0.0:
                raise EstimateError("zero normalizing sum for POP weights")
            value = np.sum(w * y) / den
        else:
            value = np.sum(w * y) / n
        spec = EstimatorSpec(family="IPW", scheme="POP",
                             ipw_normalized=normalized)
    else:
        n1 = int(np.sum(t == 1))
        n0 = n - n1
        ybar1 = float(np.mean(y[resp]))
        den = float(np.sum(w))
        if den == 0.0:
            raise EstimateError("zero normalizing sum for NR weights")
        mu0 = np.sum(w * y) / den
        value = (n1 * ybar1 + n0 * mu0) / n
        spec = EstimatorSpec(family="IPW", scheme="NR",
                             ipw_normalized=normalized)
    return _finite(value, spec, diagnostics)


def est_bc(dataset, pi_hat, y_fit, full_design, weight_cap=None):
    """Bias-corrected (augmented) estimator: mean of the outcome-model
    predictions plus the weighted mean of respondent residuals.

    ``y_fit`` is a plain least-squares fit over respondents; ``full_design``
    is the matching design over all units.
    """
    if not isinstance(y_fit, LinearFit) or not isinstance(full_design,
                                                          DesignMatrix):
        raise TypeError("est_bc needs a LinearFit and its full DesignMatrix")
    _respondent_mask(dataset)
    n = dataset.n
    mhat = predict(y_fit, full_design)
    wv = compute_weights(pi_hat, dataset.t, "POP", cap=weight_cap)
    w = wv.weights
    value = np.sum(mhat) / n + np.sum(w * (dataset.y - mhat)) / n
    spec = EstimatorSpec(family="BC",
                         y_covariates=full_design.covariate_set,
                         y_interaction=full_design.includes_interaction)
    return _finite(value, spec, _weight_diagnostics(wv))


def est_dr_wls(dataset, pi_hat, y_covariates, y_interaction=False,
               weight_cap=None):
    """Doubly robust WLS: outcome regression over respondents with weights
    1/pi, predictions averaged over all units."""
    resp = _respondent_mask(dataset)
    wv = compute_weights(pi_hat, dataset.t, "POP", cap=weight_cap)
    design_resp = build_design(dataset, y_covariates, y_interaction,
                               rows="respondents")
    fit = fit_least_squares(design_resp, dataset.y[resp],
                            weights=wv.weights[resp])
    design_all = build_design(dataset, y_covariates, y_interaction, rows="all")
    value = float(np.mean(predict(fit, design_all)))
    spec = EstimatorSpec(family="WLS",
                         y_covariates=y_covariates,
                         y_interaction=y_interaction)
    return _finite(value, spec, _weight_diagnostics(wv))
