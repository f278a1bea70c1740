"""Command-line runner: configuration, orchestration, and output files.

Precedence for settings is CLI flag > config-file key > built-in default.
The config file is flat ``key=value`` text (``#`` comments and blank lines
allowed); the run manifest written next to the tables uses the same format,
so a manifest can be replayed directly via ``--config``.

Exit codes: 0 success, 1 configuration error, 2 cell abort.
"""

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields

from .dgp import write_datasets_csv
from .estimators import EstimatorSpec
from .harness import CellAbortError, _COLUMN_BY_ID, _IDS_METHOD, \
    default_jobs, rmse, run_cell, run_tables, scenario_pair
from .propensity import GbmParams
from .weighting import BALANCE_REFERENCES

TABLES = ("both", "table1", "table2")
GBM_PROFILES = ("desk", "full")
OUTPUT_FORMATS = ("csv", "markdown")
_BOOL_WORDS = {"true": True, "false": False}


class ConfigError(ValueError):
    """Bad configuration value or malformed config file."""


@dataclass(frozen=True)
class RunConfig:
    table: str = "both"
    n: int = 1000
    replicates: int = 1000
    seed: int = 19
    gbm_profile: str = "desk"
    ipw_normalized: bool = True
    weight_cap: float | None = None
    balance_reference: str = "default"
    output_format: str = "csv"
    output_path: str = "drboost_out"

    def __post_init__(self):
        if self.table not in TABLES:
            raise ConfigError(f"table must be one of {TABLES}")
        if self.n < 8:
            raise ConfigError("n must be at least 8")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.gbm_profile not in GBM_PROFILES:
            raise ConfigError(f"gbm_profile must be one of {GBM_PROFILES}")
        if self.weight_cap is not None and not self.weight_cap > 1.0:
            raise ConfigError("weight_cap must exceed 1")
        if self.balance_reference not in BALANCE_REFERENCES:
            raise ConfigError(
                f"balance_reference must be one of {BALANCE_REFERENCES}")
        if self.output_format not in OUTPUT_FORMATS:
            raise ConfigError(
                f"output_format must be one of {OUTPUT_FORMATS}")

    def gbm_params(self):
        if self.gbm_profile == "full":
            return GbmParams.full_profile()
        return GbmParams.desk_profile()


_CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def _coerce(key, text):
    text = text.strip()
    try:
        if key in ("n", "replicates", "seed"):
            return int(text)
        if key == "ipw_normalized":
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(text)
            return _BOOL_WORDS[text.lower()]
        if key == "weight_cap":
            return None if text.lower() == "none" else float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def read_config_file(path):
    """Parse a flat key=value config file into a {key: typed value} dict."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    p = _Parser(
        prog="drboost",
        description="Reproduce the RMSE-ratio tables for IPW and doubly "
                    "robust survey-mean estimators with boosted, logistic, "
                    "and robit propensity models.",
        epilog="Environment: DRBOOST_JOBS sets worker processes; "
               "DRBOOST_NO_NUMBA=1 selects the pure-numpy kernels.")
    p.add_argument("--config", metavar="FILE",
                   help="flat key=value config file (CLI flags win)")
    p.add_argument("--table", choices=TABLES)
    p.add_argument("--n", type=int, help="sample size per replicate")
    p.add_argument("--replicates", type=int, help="Monte Carlo replicates")
    p.add_argument("--seed", type=int, help="base seed for all streams")
    p.add_argument("--gbm-profile", choices=GBM_PROFILES,
                   dest="gbm_profile",
                   help="desk: 3000 trees at 0.01; full: 10000 at 0.005")
    p.add_argument("--ipw-normalized", choices=("true", "false"),
                   dest="ipw_normalized")
    p.add_argument("--weight-cap", dest="weight_cap", metavar="CAP",
                   help="cap weights at CAP (> 1), or 'none'")
    p.add_argument("--balance-reference", choices=BALANCE_REFERENCES,
                   dest="balance_reference")
    p.add_argument("--output-format", choices=OUTPUT_FORMATS,
                   dest="output_format")
    p.add_argument("--output-path", dest="output_path", metavar="DIR")
    p.add_argument("--only-cell", metavar="CELL_ID",
                   help="run one cell (table:ps_method:ps_covs:"
                        "scheme_or_family:y_model) and dump its estimates")
    p.add_argument("--dump-data", type=int, default=0, metavar="N",
                   help="also write the first N replicates of each scenario "
                        "as CSV")
    p.add_argument("--dump-estimates", action="store_true",
                   help="also write every per-replicate estimate as CSV")
    return p


def parse_config(argv, namespace=None):
    """Resolve argv (plus any --config file) into a validated RunConfig."""
    ns = namespace if namespace is not None \
        else build_parser().parse_args(argv)
    values = {}
    if ns.config:
        values.update(read_config_file(ns.config))
    for key in _CONFIG_KEYS:
        flag = getattr(ns, key, None)
        if flag is None:
            continue
        values[key] = _coerce(key, flag) if isinstance(flag, str) else flag
    return RunConfig(**values)


def write_manifest(config, fh):
    print("# run manifest: replay with `drboost --config <this file>`",
          file=fh)
    for key in _CONFIG_KEYS:
        value = getattr(config, key)
        if value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        print(f"{key}={text}", file=fh)


_TABLE_CSV_FIELDS = ("table", "cell_id", "row", "column", "scenario",
                     "ps_method", "ps_covariates", "estimator",
                     "y_covariates", "y_interaction", "starred", "ratio",
                     "ols_rmse", "rmse", "failures")


def write_table_csv(table, fh):
    w = csv.writer(fh)
    w.writerow(_TABLE_CSV_FIELDS)
    for c in table.cells:
        w.writerow([
            c.table, c.cell_id, c.row_id, c.column_id, c.scenario,
            c.ps_method or "none", c.ps_covariates or "none", c.estimator,
            c.y_covariates, str(c.y_interaction).lower(),
            str(c.starred).lower(), repr(c.ratio), repr(c.ols_rmse),
            repr(c.rmse), c.failures])


_ESTIMATOR_LABELS = {"ols": "OLS", "pop": "IPW-POP", "nr": "IPW-NR",
                     "bc": "BC", "wls": "WLS"}
_METHOD_LABELS = {"logistic": "Logistic", "gbm": "GBM", "robit": "Robit"}


def format_table_markdown(table):
    """Paper-style grid: one-decimal ratios, parenthesized OLS RMSEs,
    a star on cells whose propensity covariates switch to Z."""
    head = ["Method", "PS covs", "Estimator"] + list(table.column_ids)
    lines = [f"{table.layout}: RMSE ratio to the per-column OLS fit "
             f"(n={table.n}, R={table.replicates}, seed={table.base_seed})",
             ""]
    rows = []
    for row_id in table.rows():
        cells = {c.column_id: c for c in table.cells if c.row_id == row_id}
        first = next(iter(cells.values()))
        if first.estimator == "ols":
            label = ["OLS", "", "RMSE"]
            body = [f"({cells[cid].rmse:.2f})" if cid in cells else ""
                    for cid in table.column_ids]
        else:
            label = [_METHOD_LABELS[first.ps_method],
                     # nominal row covariates: strip any starred override
                     "Z" if row_id.split("_")[1] == "z" else "X",
                     _ESTIMATOR_LABELS[first.estimator]]
            body = []
            for cid in table.column_ids:
                c = cells.get(cid)
                body.append("" if c is None
                            else f"{c.ratio:.1f}" + ("*" if c.starred else ""))
        rows.append(label + body)
    widths = [max(len(head[j]), *(len(r[j]) for r in rows))
              for j in range(len(head))]
    def fmt(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) \
            + " |"
    lines.append(fmt(head))
    lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    lines.extend(fmt(r) for r in rows)
    lines.append("")
    lines.append("* propensity model fit with Z in this column")
    return "\n".join(lines) + "\n"


_DIAG_FIELDS = ("replicate", "scenario", "method", "covariate_set", "scheme",
                "max_ks", "ess", "max_weight", "chosen_iterations",
                "converged")


def write_diagnostics_csv(rows, fh):
    w = csv.DictWriter(fh, fieldnames=_DIAG_FIELDS)
    w.writeheader()
    for row in rows:
        out = dict(row)
        if out["chosen_iterations"] is None:
            out["chosen_iterations"] = ""
        out["max_ks"] = repr(out["max_ks"])
        out["ess"] = repr(out["ess"])
        out["max_weight"] = repr(out["max_weight"])
        out["converged"] = str(out["converged"]).lower()
        w.writerow(out)


def write_estimates_csv(estimates, fh):
    w = csv.writer(fh)
    w.writerow(["estimate_id", "replicate", "value"])
    for key in sorted(estimates):
        for r, value in enumerate(estimates[key]):
            w.writerow([key, r, repr(float(value))])


def parse_cell_id(cell_id):
    """Split a cell id into (table, EstimatorSpec template, column spec)."""
    parts = cell_id.split(":")
    if len(parts) != 5:
        raise ConfigError(
            f"cell id must have 5 ':'-separated fields, got {cell_id!r}")
    table, method, covs, est, y_model = parts
    if table not in ("table1", "table2"):
        raise ConfigError(f"unknown table {table!r} in cell id")
    if y_model not in _COLUMN_BY_ID:
        raise ConfigError(f"unknown y_model {y_model!r} in cell id")
    col = _COLUMN_BY_ID[y_model]
    if est == "ols":
        if (method, covs) != ("none", "none"):
            raise ConfigError("ols cells use none:none for ps fields")
        spec = EstimatorSpec(family="OLS", y_covariates=col.y_covariates,
                             y_interaction=col.y_interaction)
        return table, spec, col
    if method not in _IDS_METHOD or covs not in ("z", "x"):
        raise ConfigError(
            f"unknown propensity fields {method!r}:{covs!r} in cell id")
    ps_method = _IDS_METHOD[method]
    ps_covs = covs.upper()
    if est in ("pop", "nr"):
        if table != "table1":
            raise ConfigError("IPW cells live in table1")
        spec = EstimatorSpec(family="IPW", ps_method=ps_method,
                             ps_covariates=ps_covs, scheme=est.upper())
        return table, spec, col
    if est in ("bc", "wls"):
        if table != "table2":
            raise ConfigError("BC/WLS cells live in table2")
        spec = EstimatorSpec(family=est.upper(), ps_method=ps_method,
                             ps_covariates=ps_covs,
                             y_covariates=col.y_covariates,
                             y_interaction=col.y_interaction)
        return table, spec, col
    raise ConfigError(f"unknown estimator {est!r} in cell id")


def _run_only_cell(config, cell_id, out_dir):
    table, spec, col = parse_cell_id(cell_id)
    if spec.family == "IPW" and not config.ipw_normalized:
        spec = EstimatorSpec(family="IPW", ps_method=spec.ps_method,
                             ps_covariates=spec.ps_covariates,
                             scheme=spec.scheme, ipw_normalized=False)
    scenarios = scenario_pair(config.n, config.seed)
    scenario = scenarios[0] if col.scenario_tag == "base" else scenarios[1]
    result = run_cell(spec, scenario, config.replicates,
                      gbm_params=config.gbm_params(),
                      weight_cap=config.weight_cap,
                      balance_reference=config.balance_reference)
    path = os.path.join(out_dir, "cell_estimates.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "replicate", "value"])
        for r, value in enumerate(result.values_by_replicate):
            w.writerow([cell_id, r, repr(float(value))])
    print(f"{cell_id}: rmse={rmse(result.estimates):.6f} "
          f"failures={result.failures} -> {path}")
    return 0


def run(config, only_cell=None, dump_data=0, dump_estimates=False):
    """Execute a configured run and write its output files.

    Returns the process exit code (0 ok, 2 cell abort).
    """
    out_dir = config.output_path
    os.makedirs(out_dir, exist_ok=True)
    try:
        if only_cell is not None:
            return _run_only_cell(config, only_cell, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CellAbortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        include = ("table1", "table2") if config.table == "both" \
            else (config.table,)
        scenarios = scenario_pair(config.n, config.seed)
        result = run_tables(
            scenarios, config.replicates, gbm_params=config.gbm_params(),
            ipw_normalized=config.ipw_normalized,
            weight_cap=config.weight_cap,
            balance_reference=config.balance_reference,
            jobs=default_jobs(), include=include)
    except CellAbortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    written = []
    for name, table in (("table1", result.table1), ("table2", result.table2)):
        if table is None:
            continue
        if config.output_format == "csv":
            path = os.path.join(out_dir, f"{name}.csv")
            with open(path, "w", newline="") as fh:
                write_table_csv(table, fh)
        else:
            path = os.path.join(out_dir, f"{name}.md")
            with open(path, "w") as fh:
                fh.write(format_table_markdown(table))
        written.append(path)
    path = os.path.join(out_dir, "diagnostics.csv")
    with open(path, "w", newline="") as fh:
        write_diagnostics_csv(result.diagnostics, fh)
    written.append(path)
    if dump_estimates:
        path = os.path.join(out_dir, "estimates.csv")
        with open(path, "w", newline="") as fh:
            write_estimates_csv(result.estimates, fh)
        written.append(path)
    if dump_data > 0:
        for scenario in scenarios:
            path = os.path.join(out_dir, f"datasets_{scenario.tag}.csv")
            write_datasets_csv(path, scenario, range(dump_data))
            written.append(path)
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        write_manifest(config, fh)
    written.append(path)
    for p in written:
        print(f"wrote {p}")
    return 0


def main(argv=None):
    try:
        ns = build_parser().parse_args(argv)
        config = parse_config(None, namespace=ns)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(config, only_cell=ns.only_cell, dump_data=ns.dump_data,
               dump_estimates=ns.dump_estimates)


if __name__ == "__main__":
    sys.exit(main())
