"""Simulation driver: shared-replicate table assembly, estimate bookkeeping,
determinism under parallelism, and the single-cell replay path."""

import numpy as np
import pytest

from drboost.dgp import Scenario, generate_replicate
from drboost.estimators import EstimatorSpec, est_ols_mean
from drboost.harness import (
    COLUMN_IDS,
    COLUMNS,
    GBM,
    LOGISTIC,
    TABLE1_ROWS,
    TABLE2_ROWS,
    CellAbortError,
    RowSpec,
    actual_ps_covariates,
    estimate_id_for_cell,
    rmse,
    run_cell,
    run_tables,
    scenario_pair,
)
from drboost.propensity import GbmParams

N = 120
R = 8
SEED = 1234
SMALL_GBM = GbmParams(max_trees=40, shrinkage=0.1)


@pytest.fixture(scope="module")
def small_run():
    return run_tables(scenario_pair(N, SEED), R, gbm_params=SMALL_GBM)


def test_rmse_examples():
    assert rmse([210.0, 210.0, 210.0]) == 0.0
    assert rmse([209.0, 211.0]) == 1.0
    assert rmse([213.0]) == 3.0
    assert rmse([5.0], truth=5.0) == 0.0
    with pytest.raises(ValueError):
        rmse([])


def test_table_shapes_and_row_order(small_run):
    t1, t2 = small_run.table1, small_run.table2
    assert t1.layout == "Table1" and t2.layout == "Table2"
    assert t1.column_ids == COLUMN_IDS
    assert len(t1.cells) == 13 * 5
    assert len(t2.cells) == 9 * 5
    assert t1.rows() == [r.row_id for r in TABLE1_ROWS]
    assert t2.rows() == [r.row_id for r in TABLE2_ROWS]
    assert (t1.n, t1.replicates, t1.base_seed) == (N, R, SEED)
    with pytest.raises(KeyError):
        t1.cell("ols", "fit_w")


def test_ols_row_is_the_unit_benchmark(small_run):
    for table in (small_run.table1, small_run.table2):
        for col in COLUMN_IDS:
            cell = table.cell("ols", col)
            assert cell.ratio == 1.0
            assert cell.rmse == cell.ols_rmse == table.ols_rmse_per_column[col]
            assert cell.ps_method is None
            assert cell.failures == 0
    # Both tables see the same replicates, hence the same benchmark.
    assert small_run.table1.ols_rmse_per_column == \
        small_run.table2.ols_rmse_per_column


def test_ipw_rmse_constant_across_columns_of_a_scenario(small_run):
    t1 = small_run.table1
    for row in TABLE1_ROWS:
        if row.estimator == "ols":
            continue
        base = [t1.cell(row.row_id, c) for c in ("fit_z", "fit_x")]
        inter = [t1.cell(row.row_id, c)
                 for c in ("fit_z_int", "fit_z_noint", "fit_x_int")]
        for group in (base, inter):
            rmses = {c.rmse for c in group}
            assert len(rmses) == 1
            for c in group:
                assert abs(c.ratio * c.ols_rmse - c.rmse) <= 1e-12 * c.rmse


def test_ratios_reconstruct_from_the_estimate_vectors(small_run):
    for table in (small_run.table1, small_run.table2):
        for cell in table.cells:
            values = small_run.estimates[estimate_id_for_cell(cell)]
            finite = values[np.isfinite(values)]
            assert values.shape == (R,)
            assert cell.failures == R - finite.size
            assert rmse(finite) == cell.rmse
            assert cell.ratio == pytest.approx(
                cell.rmse / table.ols_rmse_per_column[cell.column_id],
                rel=1e-15)


def test_starred_rule_applies_to_flexible_fits_only():
    gbm_wls = RowSpec("gbm_x_wls", GBM, "X", "wls")
    logistic_bc = RowSpec("logistic_x_bc", LOGISTIC, "X", "bc")
    gbm_pop = RowSpec("gbm_x_pop", GBM, "X", "pop")
    assert actual_ps_covariates(gbm_wls, "fit_z_noint") == "Z"
    assert actual_ps_covariates(gbm_wls, "fit_z_int") == "X"
    assert actual_ps_covariates(logistic_bc, "fit_z_noint") == "X"
    assert actual_ps_covariates(gbm_pop, "fit_z_noint") == "X"


def test_starred_cells_in_the_assembled_table(small_run):
    t2 = small_run.table2
    for row_id in ("gbm_x_bc", "gbm_x_wls", "robit_x_bc", "robit_x_wls"):
        starred = t2.cell(row_id, "fit_z_noint")
        assert starred.starred
        assert starred.ps_covariates == "Z"
        assert estimate_id_for_cell(starred).endswith(":fit_z_noint")
        for other in COLUMN_IDS:
            if other == "fit_z_noint":
                continue
            assert not t2.cell(row_id, other).starred
    for row_id in ("logistic_z_bc", "logistic_x_wls"):
        assert not any(t2.cell(row_id, c).starred for c in COLUMN_IDS)


def test_estimate_ids(small_run):
    t1, t2 = small_run.table1, small_run.table2
    assert estimate_id_for_cell(t1.cell("ols", "fit_z")) == "ols:fit_z"
    assert estimate_id_for_cell(t1.cell("logistic_z_pop", "fit_x")) == \
        "ipw:logistic:z:pop:base"
    assert estimate_id_for_cell(t1.cell("robit_x_nr", "fit_z_int")) == \
        "ipw:robit:x:nr:interaction"
    assert estimate_id_for_cell(t2.cell("gbm_x_wls", "fit_z_noint")) == \
        "dr:gbm:z:wls:fit_z_noint"
    for key in ("ols:fit_z", "ipw:gbm:x:pop:base", "dr:logistic:x:bc:fit_x"):
        assert key in small_run.estimates


def test_rerun_and_parallel_run_are_bit_identical(small_run):
    again = run_tables(scenario_pair(N, SEED), R, gbm_params=SMALL_GBM)
    parallel = run_tables(scenario_pair(N, SEED), R, gbm_params=SMALL_GBM,
                          jobs=2)
    assert set(again.estimates) == set(small_run.estimates)
    for key, values in small_run.estimates.items():
        assert np.array_equal(again.estimates[key], values, equal_nan=True)
        assert np.array_equal(parallel.estimates[key], values, equal_nan=True)
    assert again.table1.cells == small_run.table1.cells
    assert parallel.table2.cells == small_run.table2.cells


def test_prefix_run_matches_leading_replicates(small_run):
    half = run_tables(scenario_pair(N, SEED), R // 2, gbm_params=SMALL_GBM)
    for key, values in half.estimates.items():
        assert np.array_equal(values, small_run.estimates[key][: R // 2],
                              equal_nan=True)
    for cell in half.table1.cells + half.table2.cells:
        prefix = small_run.estimates[estimate_id_for_cell(cell)][: R // 2]
        assert cell.rmse == rmse(prefix[np.isfinite(prefix)])


def test_single_table_runs_match_the_joint_run(small_run):
    t1 = run_tables(scenario_pair(N, SEED), R, gbm_params=SMALL_GBM,
                    include=("table1",))
    assert t1.table2 is None
    assert t1.table1.cells == small_run.table1.cells
    t2 = run_tables(scenario_pair(N, SEED), R, gbm_params=SMALL_GBM,
                    include=("table2",))
    assert t2.table1 is None
    assert t2.table2.cells == small_run.table2.cells


def test_run_cell_replays_table_cells_bitwise(small_run):
    base_sc, int_sc = scenario_pair(N, SEED)
    ipw_spec = EstimatorSpec(family="IPW", ps_method=LOGISTIC,
                             ps_covariates="Z", scheme="POP")
    got = run_cell(ipw_spec, base_sc, R, gbm_params=SMALL_GBM)
    assert np.array_equal(got.values_by_replicate,
                          small_run.estimates["ipw:logistic:z:pop:base"],
                          equal_nan=True)

    bc_spec = EstimatorSpec(family="BC", ps_method=LOGISTIC,
                            ps_covariates="X", y_covariates="Z")
    got = run_cell(bc_spec, base_sc, R, gbm_params=SMALL_GBM)
    assert np.array_equal(got.values_by_replicate,
                          small_run.estimates["dr:logistic:x:bc:fit_z"],
                          equal_nan=True)

    # The starred cell replays with the covariates actually used.
    starred_spec = EstimatorSpec(family="WLS", ps_method=GBM,
                                 ps_covariates="Z", y_covariates="Z")
    got = run_cell(starred_spec, int_sc, R, gbm_params=SMALL_GBM)
    assert np.array_equal(got.values_by_replicate,
                          small_run.estimates["dr:gbm:z:wls:fit_z_noint"],
                          equal_nan=True)


def test_run_cell_single_replicate_is_the_plain_estimator():
    sc, _ = scenario_pair(N, SEED)
    got = run_cell(EstimatorSpec(family="OLS", y_covariates="Z"), sc, 1)
    direct = est_ols_mean(generate_replicate(sc, 0), "Z").value
    assert got.estimates.shape == (1,)
    assert got.estimates[0] == direct
    assert got.failures == 0


def test_scenario_pair_validation():
    base_sc, int_sc = scenario_pair(N, SEED)
    with pytest.raises(ValueError):
        run_tables((int_sc, base_sc), 2)
    with pytest.raises(ValueError):
        run_tables((base_sc, Scenario(n=N + 1, interaction=True,
                                      base_seed=SEED)), 2)
    with pytest.raises(ValueError):
        run_tables((base_sc, Scenario(n=N, interaction=True,
                                      base_seed=SEED + 1)), 2)
    with pytest.raises(ValueError):
        run_tables(scenario_pair(N, SEED), 0)


def test_unrunnable_cell_aborts_with_its_identity():
    sc, _ = scenario_pair(N, SEED)
    bad = EstimatorSpec(family="IPW", ps_method=LOGISTIC, ps_covariates="W",
                        scheme="POP")
    with pytest.raises(CellAbortError):
        run_cell(bad, sc, 4, gbm_params=SMALL_GBM)


def test_degenerate_replicate_aborts_the_run():
    # Seed 0 at n=8 draws no respondents in its very first replicate.
    sc = Scenario(n=8, interaction=False, base_seed=0)
    assert generate_replicate(sc, 0).degenerate
    with pytest.raises(CellAbortError):
        run_cell(EstimatorSpec(family="OLS", y_covariates="Z"), sc, 1)


def test_diagnostics_cover_every_fit(small_run):
    diags = small_run.diagnostics
    # 2 scenarios x R replicates x 3 methods x 2 covariate sets x 2 schemes.
    assert len(diags) == 2 * R * 3 * 2 * 2
    keys = {"replicate", "scenario", "method", "covariate_set", "scheme",
            "max_ks", "ess", "max_weight", "chosen_iterations", "converged"}
    for row in diags:
        assert set(row) == keys
        assert 0.0 <= row["max_ks"] <= 1.0
        assert row["ess"] > 0.0
        if row["method"] == "gbm":
            assert row["chosen_iterations"] is not None
        else:
            assert row["chosen_iterations"] is None
