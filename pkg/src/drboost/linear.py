"""Design matrices and (weighted) least squares.

Fits are solved by column-pivoted QR on the sqrt(weight)-scaled system; the
x4 column of the observed covariates is of order 400, so the solver must not
add instability of its own.  No column standardization is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class CollinearColumnsError(ValueError):
    """Raised when the design is rank deficient; names the offending columns."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient in columns {self.columns}")


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray          # (n, p), first column all ones
    column_labels: tuple        # p labels
    covariate_set: str          # "Z" or "X"
    includes_interaction: bool

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray  # (p,)
    fitted: np.ndarray        # (n,) over the fitting rows
    weights_used: str         # "uniform" or "supplied"
    column_labels: tuple


def build_design(dataset, covariate_set: str, include_interaction: bool = False,
                 rows: str = "all") -> DesignMatrix:
    """Intercept + four covariates (+ z1*z2 when flagged), over the chosen rows.

    The interaction column is only defined for the Z covariates; the observed
    covariates are never fit with interactions.
    """
    if include_interaction and covariate_set != "Z":
        raise ValueError("interaction column requires covariate_set='Z'")
    cov = dataset.covariates(covariate_set)
    if rows == "all":
        idx = slice(None)
    elif rows == "respondents":
        idx = dataset.t == 1
    else:
        raise ValueError(f"unknown row selection {rows!r}")
    cov = cov[idx]
    cols = [np.ones(cov.shape[0]), cov[:, 0], cov[:, 1], cov[:, 2], cov[:, 3]]
    prefix = covariate_set.lower()
    labels = ["1"] + [f"{prefix}{j}" for j in range(1, 5)]
    if include_interaction:
        cols.append(cov[:, 0] * cov[:, 1])
        labels.append(f"{prefix}1*{prefix}2")
    values = np.column_stack(cols)
    if not np.all(np.isfinite(values)):
        raise ValueError("design matrix contains non-finite entries")
    return DesignMatrix(values=values, column_labels=tuple(labels),
                        covariate_set=covariate_set,
                        includes_interaction=include_interaction)


def fit_least_squares(design: DesignMatrix, y: np.ndarray,
                      weights: np.ndarray | None = None) -> LinearFit:
    """Minimize sum_i w_i * (y_i - x_i'beta)^2.

    weights=None means uniform.  Supplied weights must be nonnegative with a
    positive sum.  Rank deficiency raises CollinearColumnsError naming the
    columns that pivoted beyond the numerical rank.
    """
    X = design.values
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if n < p:
        raise ValueError(f"need at least {p} rows, got {n}")
    if weights is None:
        Xw, yw = X, y
        tag = "uniform"
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"weights have shape {w.shape}, expected ({n},)")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not np.any(w > 0):
            raise ValueError("weights must not be all zero")
        sw = np.sqrt(w)
        Xw = X * sw[:, None]
        yw = y * sw
        tag = "supplied"
    Q, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank < p:
        bad = [design.column_labels[j] for j in piv[rank:]]
        raise CollinearColumnsError(bad)
    z = Q.T @ yw
    beta_piv = scipy.linalg.solve_triangular(R, z)
    beta = np.empty(p)
    beta[piv] = beta_piv
    return LinearFit(coefficients=beta, fitted=X @ beta, weights_used=tag,
                     column_labels=design.column_labels)


def fit_least_squares_array(X: np.ndarray, y: np.ndarray,
                            weights: np.ndarray | None = None) -> np.ndarray:
    """Coefficients only, for callers that assemble raw working systems
    (the IRLS and Fisher-scoring loops)."""
    X = np.asarray(X, dtype=float)
    design = DesignMatrix(
        values=X,
        column_labels=tuple(f"c{j}" for j in range(X.shape[1])),
        covariate_set="Z",
        includes_interaction=False)
    return fit_least_squares(design, y, weights).coefficients


def predict(fit: LinearFit, design: DesignMatrix) -> np.ndarray:
    """Evaluate x_i'beta for every row of the design."""
    if design.column_labels != fit.column_labels:
        raise ValueError(
            f"design columns {design.column_labels} do not match "
            f"fit columns {fit.column_labels}")
    return design.values @ fit.coefficients
