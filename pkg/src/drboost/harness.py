"""Monte Carlo driver: run every estimator over shared replicates and
assemble the two RMSE-ratio tables.

Replicates are shared across all rows and both tables within a generating
scenario (common random numbers), so IPW ratios in different columns of one
scenario differ only through the OLS denominator.  Propensity fits are
computed once per (scenario, method, covariate set, replicate) and reused
by every estimator that needs them.  Replicate r draws from an RNG stream
derived from (base_seed, scenario, r), so results are independent of
scheduling and parallelism.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .dgp import Scenario, TRUE_MEAN, generate_replicate
from .estimators import EstimateError, EstimatorSpec, est_bc, est_dr_wls, \
    est_ipw, est_ols_mean
from .linear import CollinearColumnsError, build_design, fit_least_squares, \
    predict
from .propensity import GBM, GbmParams, LOGISTIC, ROBIT1, fit_gbm, \
    fit_logistic, fit_robit1
from .weighting import BalanceSpec, compute_weights, effective_sample_size, \
    max_marginal_ks

SCENARIO_TAGS = ("base", "interaction")
_METHOD_IDS = {LOGISTIC: "logistic", GBM: "gbm", ROBIT1: "robit"}
_IDS_METHOD = {v: k for k, v in _METHOD_IDS.items()}
_FAILURE_ERRORS = (EstimateError, CollinearColumnsError, ValueError)


class CellAbortError(RuntimeError):
    """A cell (or a whole scenario) could not be completed; names the cell."""


@dataclass(frozen=True)
class ColumnSpec:
    column_id: str
    scenario_tag: str
    y_covariates: str
    y_interaction: bool


COLUMNS = (
    ColumnSpec("fit_z", "base", "Z", False),
    ColumnSpec("fit_x", "base", "X", False),
    ColumnSpec("fit_z_int", "interaction", "Z", True),
    ColumnSpec("fit_z_noint", "interaction", "Z", False),
    ColumnSpec("fit_x_int", "interaction", "X", False),
)

COLUMN_IDS = tuple(c.column_id for c in COLUMNS)
_COLUMN_BY_ID = {c.column_id: c for c in COLUMNS}


@dataclass(frozen=True)
class RowSpec:
    row_id: str
    ps_method: str | None     # internal method tag, None for the OLS row
    ps_covariates: str | None  # nominal row covariates ("Z"/"X")
    estimator: str            # ols | pop | nr | bc | wls


def _make_rows(estimator_pairs):
    rows = [RowSpec("ols", None, None, "ols")]
    for method in (LOGISTIC, GBM, ROBIT1):
        for covs, ests in estimator_pairs[method]:
            for est in ests:
                rows.append(RowSpec(
                    f"{_METHOD_IDS[method]}_{covs.lower()}_{est}",
                    method, covs, est))
    return tuple(rows)


TABLE1_ROWS = _make_rows({
    LOGISTIC: [("Z", ("pop", "nr")), ("X", ("pop", "nr"))],
    GBM: [("Z", ("pop", "nr")), ("X", ("pop", "nr"))],
    ROBIT1: [("Z", ("pop", "nr")), ("X", ("pop", "nr"))],
})

TABLE2_ROWS = _make_rows({
    LOGISTIC: [("Z", ("bc", "wls")), ("X", ("bc", "wls"))],
    GBM: [("X", ("bc", "wls"))],
    ROBIT1: [("X", ("bc", "wls"))],
})


def actual_ps_covariates(row, column_id):
    """Table 2's starred rule: GBM and robit propensity models switch to the
    true covariates in the interaction scenario's no-interaction column."""
    if row.ps_method in (GBM, ROBIT1) and column_id == "fit_z_noint" \
            and row.estimator in ("bc", "wls"):
        return "Z"
    return row.ps_covariates


@dataclass(frozen=True)
class CellRecord:
    table: str
    cell_id: str
    row_id: str
    column_id: str
    scenario: str
    ps_method: str | None      # method id as printed (logistic/gbm/robit)
    ps_covariates: str | None  # covariates actually used in this cell
    estimator: str
    y_covariates: str
    y_interaction: bool
    starred: bool
    ratio: float
    ols_rmse: float
    rmse: float
    failures: int


@dataclass
class RmseTable:
    layout: str                # "Table1" | "Table2"
    n: int
    replicates: int
    base_seed: int
    column_ids: tuple
    ols_rmse_per_column: dict
    cells: tuple

    def cell(self, row_id, column_id):
        for c in self.cells:
            if c.row_id == row_id and c.column_id == column_id:
                return c
        raise KeyError((row_id, column_id))

    def rows(self):
        seen = []
        for c in self.cells:
            if c.row_id not in seen:
                seen.append(c.row_id)
        return seen


@dataclass
class CellResult:
    spec: EstimatorSpec
    scenario: Scenario
    estimates: np.ndarray          # finite estimates only
    failures: int
    values_by_replicate: np.ndarray  # length R, NaN where the replicate failed


@dataclass
class TablesResult:
    table1: RmseTable | None
    table2: RmseTable | None
    diagnostics: list
    estimates: dict = field(default_factory=dict)


def rmse(estimates, truth=TRUE_MEAN):
    """Root-mean-square error about the true mean."""
    a = np.asarray(estimates, dtype=float)
    if a.size == 0:
        raise ValueError("rmse of an empty estimate vector")
    return float(np.sqrt(np.mean((a - truth) ** 2)))


def default_jobs():
    return max(1, int(os.environ.get("DRBOOST_JOBS", "1")))


def scenario_pair(n, base_seed):
    """The two generating scenarios sharing a seed: plain and interaction."""
    return (Scenario(n=n, interaction=False, base_seed=base_seed),
            Scenario(n=n, interaction=True, base_seed=base_seed))


def _y_models(tag):
    return tuple((c.column_id, c.y_covariates, c.y_interaction)
                 for c in COLUMNS if c.scenario_tag == tag)


def _fit_propensity(method, covset, dataset, gbm_params, balance_reference):
    if method == GBM:
        balance = BalanceSpec(scheme="POP", covariate_set=covset,
                              reference=balance_reference)
        _, fit = fit_gbm(dataset.covariates(covset), dataset.t, gbm_params,
                         balance)
        return fit
    design = build_design(dataset, covset, False, rows="all")
    if method == LOGISTIC:
        return fit_logistic(design, dataset.t)
    if method == ROBIT1:
        return fit_robit1(design, dataset.t)
    raise ValueError(f"unknown propensity method {method!r}")


def _replicate_bundle(scenario, r, gbm_params, ipw_normalized, weight_cap,
                      balance_reference, include_ipw, include_dr):
    """Everything both tables need from one replicate of one scenario."""
    ds = generate_replicate(scenario, r)
    tag = scenario.tag
    if ds.degenerate:
        raise CellAbortError(
            f"replicate {r} of scenario {tag} is degenerate (all t equal)")

    fits = {}
    for covset in ("Z", "X"):
        for method in (LOGISTIC, GBM, ROBIT1):
            try:
                fits[(method, covset)] = _fit_propensity(
                    method, covset, ds, gbm_params, balance_reference)
            except _FAILURE_ERRORS:
                fits[(method, covset)] = None

    ols = {}
    yfits = {}
    for ym, ycov, yint in _y_models(tag):
        try:
            resp = ds.t == 1
            dresp = build_design(ds, ycov, yint, rows="respondents")
            yfit = fit_least_squares(dresp, ds.y[resp])
            dall = build_design(ds, ycov, yint, rows="all")
            ols[ym] = float(np.mean(predict(yfit, dall)))
            yfits[ym] = (yfit, dall)
        except _FAILURE_ERRORS:
            ols[ym] = float("nan")
            yfits[ym] = None

    ipw = {}
    if include_ipw:
        for method in (LOGISTIC, GBM, ROBIT1):
            for covset in ("Z", "X"):
                fit = fits[(method, covset)]
                for scheme in ("POP", "NR"):
                    key = (method, covset, scheme)
                    if fit is None:
                        ipw[key] = float("nan")
                        continue
                    try:
                        ipw[key] = est_ipw(ds, fit.pi_hat, scheme,
                                           normalized=ipw_normalized,
                                           weight_cap=weight_cap).value
                    except _FAILURE_ERRORS:
                        ipw[key] = float("nan")

    dr = {}
    if include_dr:
        for ym, ycov, yint in _y_models(tag):
            for row in TABLE2_ROWS:
                if row.estimator == "ols":
                    continue
                actual = actual_ps_covariates(row, ym)
                fit = fits[(row.ps_method, actual)]
                key = (row.ps_method, row.ps_covariates, row.estimator, ym)
                if key in dr:
                    continue
                if fit is None or (row.estimator == "bc"
                                   and yfits[ym] is None):
                    dr[key] = float("nan")
                    continue
                try:
                    if row.estimator == "bc":
                        yfit, dall = yfits[ym]
                        dr[key] = est_bc(ds, fit.pi_hat, yfit, dall,
                                         weight_cap=weight_cap).value
                    else:
                        dr[key] = est_dr_wls(ds, fit.pi_hat, ycov, yint,
                                             weight_cap=weight_cap).value
                except _FAILURE_ERRORS:
                    dr[key] = float("nan")

    diag = []
    for covset in ("Z", "X"):
        cov = ds.covariates(covset)
        for method in (LOGISTIC, GBM, ROBIT1):
            fit = fits[(method, covset)]
            if fit is None:
                continue
            for scheme in ("POP", "NR"):
                wv = compute_weights(fit.pi_hat, ds.t, scheme, cap=weight_cap)
                diag.append({
                    "replicate": r,
                    "scenario": tag,
                    "method": _METHOD_IDS[method],
                    "covariate_set": covset,
                    "scheme": scheme,
                    "max_ks": max_marginal_ks(cov, ds.t, wv,
                                              reference=balance_reference),
                    "ess": effective_sample_size(wv),
                    "max_weight": float(np.max(wv.weights)),
                    "chosen_iterations": fit.chosen_iterations,
                    "converged": fit.converged,
                })

    return {"replicate": r, "scenario": tag, "ols": ols, "ipw": ipw,
            "dr": dr, "diag": diag}


def _compute_bundles(scenario, R, jobs, **kwargs):
    if jobs <= 1:
        return [_replicate_bundle(scenario, r, **kwargs) for r in range(R)]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=jobs)(
        delayed(_replicate_bundle)(scenario, r, **kwargs) for r in range(R))


def _estimate_id(kind, *parts):
    return ":".join((kind,) + tuple(str(p).lower() for p in parts))


def estimate_id_for_cell(cell):
    """Key into TablesResult.estimates holding this cell's estimate vector."""
    if cell.estimator == "ols":
        return _estimate_id("ols", cell.column_id)
    if cell.estimator in ("pop", "nr"):
        return _estimate_id("ipw", cell.ps_method, cell.ps_covariates,
                            cell.estimator, cell.scenario)
    return _estimate_id("dr", cell.ps_method, cell.ps_covariates,
                        cell.estimator, cell.column_id)


def _assemble_table(layout, rows, R, n, base_seed, estimates, aborted):
    table = "table1" if layout == "Table1" else "table2"
    cells = []
    ols_rmse = {}
    for col in COLUMNS:
        values = estimates[_estimate_id("ols", col.column_id)]
        finite = values[np.isfinite(values)]
        failures = R - finite.size
        if failures > 0.1 * R:
            aborted.append(f"{table}:none:none:ols:{col.column_id}")
            continue
        ols_rmse[col.column_id] = rmse(finite)
        cells.append(CellRecord(
            table=table,
            cell_id=f"{table}:none:none:ols:{col.column_id}",
            row_id="ols", column_id=col.column_id,
            scenario=col.scenario_tag, ps_method=None, ps_covariates=None,
            estimator="ols", y_covariates=col.y_covariates,
            y_interaction=col.y_interaction, starred=False,
            ratio=1.0, ols_rmse=ols_rmse[col.column_id],
            rmse=ols_rmse[col.column_id], failures=failures))
    for row in rows:
        if row.estimator == "ols":
            continue
        for col in COLUMNS:
            actual = actual_ps_covariates(row, col.column_id)
            starred = actual != row.ps_covariates
            if row.estimator in ("pop", "nr"):
                key = _estimate_id("ipw", _METHOD_IDS[row.ps_method],
                                   actual, row.estimator, col.scenario_tag)
            else:
                key = _estimate_id("dr", _METHOD_IDS[row.ps_method],
                                   actual, row.estimator, col.column_id)
            values = estimates[key]
            finite = values[np.isfinite(values)]
            failures = R - finite.size
            cell_id = (f"{table}:{_METHOD_IDS[row.ps_method]}:"
                       f"{actual.lower()}:{row.estimator}:{col.column_id}")
            if failures > 0.1 * R or col.column_id not in ols_rmse:
                aborted.append(cell_id)
                continue
            cell_rmse = rmse(finite)
            cells.append(CellRecord(
                table=table, cell_id=cell_id, row_id=row.row_id,
                column_id=col.column_id, scenario=col.scenario_tag,
                ps_method=_METHOD_IDS[row.ps_method], ps_covariates=actual,
                estimator=row.estimator, y_covariates=col.y_covariates,
                y_interaction=col.y_interaction, starred=starred,
                ratio=cell_rmse / ols_rmse[col.column_id],
                ols_rmse=ols_rmse[col.column_id], rmse=cell_rmse,
                failures=failures))
    return RmseTable(layout=layout, n=n, replicates=R, base_seed=base_seed,
                     column_ids=COLUMN_IDS, ols_rmse_per_column=ols_rmse,
                     cells=tuple(cells))


def run_tables(scenarios, replicates, gbm_params=None, ipw_normalized=True,
               weight_cap=None, balance_reference="default", jobs=None,
               include=("table1", "table2")):
    """Run the shared-replicate simulation and assemble the requested tables.

    ``scenarios`` is the (plain, interaction) pair from
    :func:`scenario_pair`.  Returns a :class:`TablesResult` whose
    ``estimates`` maps estimate ids to length-R vectors (NaN = failed
    replicate) for every distinct estimator that was run.
    """
    base_sc, int_sc = scenarios
    if base_sc.interaction or not int_sc.interaction:
        raise ValueError("scenarios must be the (plain, interaction) pair")
    if base_sc.n != int_sc.n or base_sc.base_seed != int_sc.base_seed:
        raise ValueError("paired scenarios must share n and base_seed")
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    if gbm_params is None:
        gbm_params = GbmParams.desk_profile()
    if jobs is None:
        jobs = default_jobs()
    include_ipw = "table1" in include
    include_dr = "table2" in include
    R = replicates

    bundles = {}
    diagnostics = []
    for scenario in (base_sc, int_sc):
        tag = scenario.tag
        bundles[tag] = _compute_bundles(
            scenario, R, jobs, gbm_params=gbm_params,
            ipw_normalized=ipw_normalized, weight_cap=weight_cap,
            balance_reference=balance_reference, include_ipw=include_ipw,
            include_dr=include_dr)
        for b in bundles[tag]:
            diagnostics.extend(b["diag"])

    estimates = {}
    for col in COLUMNS:
        estimates[_estimate_id("ols", col.column_id)] = np.array(
            [b["ols"][col.column_id] for b in bundles[col.scenario_tag]])
    if include_ipw:
        for method in (LOGISTIC, GBM, ROBIT1):
            for covset in ("Z", "X"):
                for scheme in ("POP", "NR"):
                    for tag in SCENARIO_TAGS:
                        key = _estimate_id("ipw", _METHOD_IDS[method], covset,
                                           scheme.lower(), tag)
                        estimates[key] = np.array(
                            [b["ipw"][(method, covset, scheme)]
                             for b in bundles[tag]])
    if include_dr:
        for col in COLUMNS:
            for row in TABLE2_ROWS:
                if row.estimator == "ols":
                    continue
                actual = actual_ps_covariates(row, col.column_id)
                key = _estimate_id("dr", _METHOD_IDS[row.ps_method], actual,
                                   row.estimator, col.column_id)
                bundle_key = (row.ps_method, row.ps_covariates, row.estimator,
                              col.column_id)
                estimates[key] = np.array(
                    [b["dr"][bundle_key]
                     for b in bundles[col.scenario_tag]])

    aborted = []
    table1 = table2 = None
    if include_ipw:
        table1 = _assemble_table("Table1", TABLE1_ROWS, R, base_sc.n,
                                 base_sc.base_seed, estimates, aborted)
    if include_dr:
        table2 = _assemble_table("Table2", TABLE2_ROWS, R, base_sc.n,
                                 base_sc.base_seed, estimates, aborted)
    if aborted:
        raise CellAbortError(
            "cells aborted (failures exceeded 10% of replicates): "
            + ", ".join(aborted))
    return TablesResult(table1=table1, table2=table2,
                        diagnostics=diagnostics, estimates=estimates)


def run_table1(scenarios, replicates, **kwargs):
    kwargs.setdefault("include", ("table1",))
    return run_tables(scenarios, replicates, **kwargs).table1


def run_table2(scenarios, replicates, **kwargs):
    kwargs.setdefault("include", ("table2",))
    return run_tables(scenarios, replicates, **kwargs).table2


def _evaluate_spec(spec, ds, gbm_params, weight_cap, balance_reference):
    if spec.family == "OLS":
        return est_ols_mean(ds, spec.y_covariates, spec.y_interaction).value
    fit = _fit_propensity(spec.ps_method, spec.ps_covariates, ds, gbm_params,
                          balance_reference)
    if fit is None:
        raise EstimateError("propensity fit unavailable")
    if spec.family == "IPW":
        return est_ipw(ds, fit.pi_hat, spec.scheme,
                       normalized=spec.ipw_normalized,
                       weight_cap=weight_cap).value
    if spec.family == "BC":
        resp = ds.t == 1
        dresp = build_design(ds, spec.y_covariates, spec.y_interaction,
                             rows="respondents")
        yfit = fit_least_squares(dresp, ds.y[resp])
        dall = build_design(ds, spec.y_covariates, spec.y_interaction,
                            rows="all")
        return est_bc(ds, fit.pi_hat, yfit, dall, weight_cap=weight_cap).value
    if spec.family == "WLS":
        return est_dr_wls(ds, fit.pi_hat, spec.y_covariates,
                          spec.y_interaction, weight_cap=weight_cap).value
    raise ValueError(f"unknown family {spec.family!r}")


def run_cell(spec, scenario, replicates, gbm_params=None, weight_cap=None,
             balance_reference="default"):
    """Evaluate a single estimator over R replicates of one scenario.

    Fits only what the estimator needs; estimates are bit-identical to the
    shared-fit table path because both call the same fitters on the same
    generated data.
    """
    if gbm_params is None:
        gbm_params = GbmParams.desk_profile()
    R = replicates
    values = np.full(R, np.nan)
    for r in range(R):
        ds = generate_replicate(scenario, r)
        if ds.degenerate:
            raise CellAbortError(
                f"replicate {r} of scenario {scenario.tag} is degenerate")
        try:
            values[r] = _evaluate_spec(spec, ds, gbm_params, weight_cap,
                                       balance_reference)
        except _FAILURE_ERRORS:
            pass
    finite = values[np.isfinite(values)]
    failures = R - finite.size
    if failures > 0.1 * R:
        raise CellAbortError(
            f"cell for {spec} aborted: {failures} of {R} replicates failed")
    return CellResult(spec=spec, scenario=scenario, estimates=finite,
                      failures=failures, values_by_replicate=values)
