"""Command-line interface: config resolution and validation, output files,
manifest replay, cell addressing, and exit codes."""

import csv
import io

import numpy as np
import pytest

from drboost.cli import (
    ConfigError,
    RunConfig,
    build_parser,
    format_table_markdown,
    main,
    parse_cell_id,
    parse_config,
    read_config_file,
    write_manifest,
)

SMALL = ["--n", "64", "--replicates", "3", "--seed", "777"]


@pytest.fixture(scope="module")
def small_cli_run(tmp_path_factory):
    """One full small run with every optional dump enabled."""
    out = tmp_path_factory.mktemp("cli_run")
    code = main(SMALL + ["--output-path", str(out), "--dump-estimates",
                         "--dump-data", "2"])
    assert code == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --------------------------------------------------------------------- config

def test_defaults():
    config = parse_config([])
    assert config == RunConfig()
    assert (config.table, config.n, config.replicates) == ("both", 1000, 1000)
    assert config.seed == 19
    assert config.gbm_profile == "desk"
    assert config.ipw_normalized is True
    assert config.weight_cap is None
    assert (config.output_format, config.output_path) == ("csv", "drboost_out")


def test_flag_parsing_and_profiles():
    config = parse_config(["--replicates", "50", "--table", "table1"])
    assert config.replicates == 50
    assert config.table == "table1"
    assert config.gbm_params().max_trees == 3000
    full = parse_config(["--gbm-profile", "full"])
    assert full.gbm_params().max_trees == 10000
    off = parse_config(["--ipw-normalized", "false", "--weight-cap", "2.5"])
    assert off.ipw_normalized is False
    assert off.weight_cap == 2.5
    assert parse_config(["--weight-cap", "none"]).weight_cap is None


def test_config_file_and_cli_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\n\nreplicates=5\nn=64\noutput_format=markdown\n")
    from_file = parse_config(["--config", str(cfg)])
    assert (from_file.replicates, from_file.n) == (5, 64)
    assert from_file.output_format == "markdown"
    overridden = parse_config(["--config", str(cfg), "--replicates", "7"])
    assert (overridden.replicates, overridden.n) == (7, 64)


def test_config_file_errors(tmp_path):
    bad_key = tmp_path / "a.cfg"
    bad_key.write_text("replicats=5\n")
    with pytest.raises(ConfigError, match="unknown key"):
        read_config_file(bad_key)
    no_eq = tmp_path / "b.cfg"
    no_eq.write_text("replicates 5\n")
    with pytest.raises(ConfigError, match="key=value"):
        read_config_file(no_eq)
    bad_val = tmp_path / "c.cfg"
    bad_val.write_text("n=sixty\n")
    with pytest.raises(ConfigError, match="bad value"):
        read_config_file(bad_val)
    with pytest.raises(ConfigError, match="cannot read"):
        read_config_file(tmp_path / "missing.cfg")


def test_value_invariants():
    with pytest.raises(ConfigError):
        RunConfig(weight_cap=0.5)
    with pytest.raises(ConfigError):
        RunConfig(n=7)
    with pytest.raises(ConfigError):
        RunConfig(replicates=0)
    with pytest.raises(ConfigError):
        RunConfig(table="table3")
    with pytest.raises(ConfigError):
        RunConfig(balance_reference="matched")
    with pytest.raises(ConfigError):
        RunConfig(output_format="json")


def test_manifest_round_trip(tmp_path):
    config = RunConfig(table="table2", n=64, replicates=9, seed=5,
                       gbm_profile="full", ipw_normalized=False,
                       weight_cap=3.5, output_format="markdown",
                       output_path="somewhere")
    path = tmp_path / "manifest.txt"
    with open(path, "w") as fh:
        write_manifest(config, fh)
    assert RunConfig(**read_config_file(path)) == config
    # And the same for a config with the None/bool values flipped.
    config = RunConfig()
    with open(path, "w") as fh:
        write_manifest(config, fh)
    assert RunConfig(**read_config_file(path)) == config


def test_bad_flags_exit_with_config_error_code(capsys):
    assert main(["--table", "table9"]) == 1
    assert main(["--weight-cap", "0.5"]) == 1
    assert main(["--weight-cap", "lots"]) == 1
    assert main(["--no-such-flag"]) == 1
    capsys.readouterr()


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "drboost" in out
    assert "DRBOOST_NO_NUMBA" in out


# ------------------------------------------------------------------- cell ids

def test_parse_cell_id_round_trip():
    table, spec, col = parse_cell_id("table1:logistic:z:pop:fit_z")
    assert table == "table1"
    assert (spec.family, spec.scheme) == ("IPW", "POP")
    assert spec.ps_covariates == "Z"
    assert col.column_id == "fit_z"

    table, spec, col = parse_cell_id("table2:gbm:z:wls:fit_z_noint")
    assert (spec.family, spec.ps_covariates) == ("WLS", "Z")
    assert (spec.y_covariates, spec.y_interaction) == ("Z", False)

    table, spec, col = parse_cell_id("table2:none:none:ols:fit_x_int")
    assert spec.family == "OLS"
    assert (spec.y_covariates, col.scenario_tag) == ("X", "interaction")


def test_parse_cell_id_rejects_malformed_ids():
    for bad in ("table1:logistic:z:pop",
                "table3:logistic:z:pop:fit_z",
                "table1:probit:z:pop:fit_z",
                "table1:logistic:w:pop:fit_z",
                "table1:logistic:z:pop:fit_q",
                "table1:none:z:ols:fit_z",
                "table2:logistic:z:pop:fit_z",
                "table1:logistic:z:bc:fit_z",
                "table1:logistic:z:trim:fit_z"):
        with pytest.raises(ConfigError):
            parse_cell_id(bad)


# -------------------------------------------------------------------- outputs

def test_run_writes_all_requested_files(small_cli_run):
    for name in ("table1.csv", "table2.csv", "diagnostics.csv",
                 "estimates.csv", "datasets_base.csv",
                 "datasets_interaction.csv", "manifest.txt"):
        assert (small_cli_run / name).exists()


def test_table_csv_shape_and_reconstruction(small_cli_run):
    rows = read_csv(small_cli_run / "table1.csv")
    header, data = rows[0], rows[1:]
    assert header[:4] == ["table", "cell_id", "row", "column"]
    assert len(header) == 15
    assert len(data) == 13 * 5
    for row in data:
        ratio, ols_rmse, abs_rmse = map(float, row[11:14])
        assert abs(ratio * ols_rmse - abs_rmse) <= 1e-9 * max(1.0, abs_rmse)
        assert row[14] == "0" or int(row[14]) >= 0
    ols_rows = [r for r in data if r[2] == "ols"]
    assert len(ols_rows) == 5
    assert all(float(r[11]) == 1.0 for r in ols_rows)
    assert len(read_csv(small_cli_run / "table2.csv")) == 1 + 9 * 5


def test_manifest_replays_the_run_config(small_cli_run):
    values = read_config_file(small_cli_run / "manifest.txt")
    config = RunConfig(**values)
    assert (config.n, config.replicates, config.seed) == (64, 3, 777)
    assert config.output_path == str(small_cli_run)


def test_diagnostics_file_is_well_formed(small_cli_run):
    rows = read_csv(small_cli_run / "diagnostics.csv")
    assert rows[0] == ["replicate", "scenario", "method", "covariate_set",
                      "scheme", "max_ks", "ess", "max_weight",
                      "chosen_iterations", "converged"]
    assert len(rows) == 1 + 2 * 3 * 3 * 2 * 2  # scenarios x R x fits x schemes
    for row in rows[1:]:
        assert row[1] in ("base", "interaction")
        assert 0.0 <= float(row[5]) <= 1.0
        if row[2] == "gbm":
            assert row[8] != ""
        else:
            assert row[8] == ""


def test_only_cell_replays_full_run_estimates(small_cli_run, tmp_path, capsys):
    full = {(r[0], r[1]): r[2]
            for r in read_csv(small_cli_run / "estimates.csv")[1:]}
    for cell_id, key in [
            ("table1:logistic:z:pop:fit_z", "ipw:logistic:z:pop:base"),
            ("table2:gbm:z:wls:fit_z_noint", "dr:gbm:z:wls:fit_z_noint")]:
        out = tmp_path / cell_id.replace(":", "_")
        code = main(SMALL + ["--output-path", str(out),
                             "--only-cell", cell_id])
        assert code == 0
        replay = read_csv(out / "cell_estimates.csv")[1:]
        assert len(replay) == 3
        for cid, r, value in replay:
            assert cid == cell_id
            assert value == full[(key, r)]
    assert "rmse=" in capsys.readouterr().out


def test_rerun_is_byte_identical(small_cli_run, capsys):
    names = ("table1.csv", "table2.csv", "diagnostics.csv", "estimates.csv",
             "manifest.txt")
    before = {n: (small_cli_run / n).read_bytes() for n in names}
    code = main(SMALL + ["--output-path", str(small_cli_run),
                         "--dump-estimates", "--dump-data", "2"])
    assert code == 0
    capsys.readouterr()
    for n in names:
        assert (small_cli_run / n).read_bytes() == before[n]


def test_markdown_rendering(tmp_path, capsys):
    out = tmp_path / "md"
    code = main(SMALL + ["--output-path", str(out),
                         "--output-format", "markdown"])
    assert code == 0
    capsys.readouterr()
    text = (out / "table1.md").read_text()
    assert text.startswith("Table1: RMSE ratio")
    assert "| Method" in text
    assert "| OLS" in text and "(" in text
    assert "| Logistic | Z" in text
    t2 = (out / "table2.md").read_text()
    assert "* propensity model fit with Z in this column" in t2
    line = next(ln for ln in t2.splitlines() if ln.startswith("| GBM"))
    assert "*" in line.replace("| GBM", "")


def test_markdown_formatter_units(small_cli_run):
    # Rendering is pure: format the parsed table from a fresh harness run.
    from drboost.harness import run_tables, scenario_pair
    from drboost.propensity import GbmParams
    result = run_tables(scenario_pair(64, 777), 3,
                        gbm_params=GbmParams(max_trees=30, shrinkage=0.1))
    text = format_table_markdown(result.table1)
    lines = text.splitlines()
    assert lines[2].startswith("| Method")
    assert set(lines[3]) <= {"|", "-"}
    assert lines[-1] == "* propensity model fit with Z in this column"


def test_cell_abort_exit_code(tmp_path, capsys):
    # Seed 0 at n=8 makes the first replicate degenerate.
    code = main(["--n", "8", "--seed", "0", "--replicates", "1",
                 "--only-cell", "table1:none:none:ols:fit_z",
                 "--output-path", str(tmp_path / "abort")])
    assert code == 2
    assert "degenerate" in capsys.readouterr().err


def test_only_cell_with_bad_id_is_a_config_error(tmp_path, capsys):
    code = main(SMALL + ["--output-path", str(tmp_path / "bad"),
                         "--only-cell", "table1:what:z:pop:fit_z"])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_dumped_datasets_parse(small_cli_run):
    rows = read_csv(small_cli_run / "datasets_base.csv")
    assert rows[0][:3] == ["replicate", "unit", "z1"]
    assert len(rows) == 1 + 2 * 64
    floats = [float(v) for v in rows[1][2:]]
    assert all(np.isfinite(floats))


def test_parser_epilog_documents_env_knobs():
    parser = build_parser()
    assert "DRBOOST_JOBS" in parser.epilog
    assert "DRBOOST_NO_NUMBA" in parser.epilog
