"""Command-line interface.

Subcommands run a procedure on a CSV of per-hypothesis data (columns:
``pvalue`` required, ``group`` / ``truth`` optional, any other numeric
column is treated as a covariate) or drive a simulation campaign.  Every
data run writes a rejection CSV (``index, rejected, evalue, weight``, index
1-based) plus a JSON summary next to it, and echoes the summary to stdout.

Exit codes: 0 success, 2 input error (unreadable file, bad column), 3
configuration error (bad level, wrong weight scheme for a subcommand).
"""

from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
from pathlib import Path

import numpy as np

from .adaptive import fit_lfdr_em, structure_pipeline
from .errors import ConfigurationError, InputError
from .groups import GroupPartition, run_grouped_ebh
from .hybrid import HybridConfig, _hybrid_evalues
from .knockoffs import knockoff_evalues
from .procedures import (
    ProcedureSpec,
    as_evalues,
    ebh_select,
    fdp_power,
    procedure_to_evalues,
    solve_threshold,
)
from .simulate import SimulationConfig, run_campaign

_SPECIAL_COLUMNS = ("pvalue", "group", "truth", "evalue")

_GROUP_SCHEMES = {"unit": "unit", "size": "size", "adaptive": "adaptive"}
_HYBRID_MODES = {"averaged": "averaged", "adaptive": "adaptive", "fast": "fast"}
_ADAPTIVE_MODES = {"unit": "unit", "cheap": "cheap", "full": "full"}

_DEFAULT_METHODS = {
    "grouped": ["BC_Com", "BC_Sep", "eBH_1", "eBH_2", "eBH_Ada"],
    "scores": ["BH", "ST", "BC", "eBH_Ave", "eBH_Ada", "fast_eBH_Ada"],
    "STRUCT": ["BH", "eBH_FBC"],
    "KNOCK_SYNTH": ["KO_1", "KO_2", "KO_Hybrid"],
    "ALLNULL": ["BH", "ST", "BC"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evmt",
        description="FDR procedures, e-value aggregation and simulation campaigns",
    )
    parser.add_argument(
        "subcommand",
        choices=[
            "bh", "storey", "bc", "fbc", "ebh", "groups", "hybrid",
            "adaptive", "knockoff-combine", "simulate",
        ],
    )
    parser.add_argument("--input", action="append", default=None, metavar="PATH",
                        help="input CSV (repeat for knockoff-combine)")
    parser.add_argument("--alpha", type=float, default=None,
                        help="target FDR level (default 0.05)")
    parser.add_argument("--weights", default=None,
                        help="unit|size|adaptive (groups), averaged|adaptive|fast "
                             "(hybrid), unit|cheap|full (adaptive)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, metavar="PATH")
    parser.add_argument("--reps", type=int, default=None)
    parser.add_argument("--setting", default=None)
    return parser


def read_table(path) -> dict:
    """Parse a CSV with a header row into typed column arrays."""
    try:
        handle = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        columns = {name: [] for name in header}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            for name, cell in zip(header, row):
                columns[name].append(cell.strip())

    n = len(next(iter(columns.values()))) if columns else 0
    if n == 0:
        raise InputError(f"{path}: no data rows")

    table = {}
    for name, cells in columns.items():
        if name == "group":
            table[name] = np.asarray(cells)
            continue
        values = np.empty(len(cells))
        for i, cell in enumerate(cells):
            try:
                values[i] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: line {i + 2}: cannot parse {name}={cell!r} as a number"
                ) from None
        table[name] = values
    if "pvalue" in table and (np.min(table["pvalue"]) < 0 or np.max(table["pvalue"]) > 1):
        bad = int(np.argmax((table["pvalue"] < 0) | (table["pvalue"] > 1)))
        raise InputError(f"{path}: line {bad + 2}: pvalue outside [0, 1]")
    if "truth" in table and not np.all(np.isin(table["truth"], (0.0, 1.0))):
        bad = int(np.argmax(~np.isin(table["truth"], (0.0, 1.0))))
        raise InputError(f"{path}: line {bad + 2}: truth must be 0 or 1")
    return table


def _covariates(table) -> np.ndarray | None:
    names = [c for c in table if c not in _SPECIAL_COLUMNS]
    if not names:
        return None
    return np.column_stack([table[c] for c in sorted(names)])


def _require(table, column, path):
    if column not in table:
        raise InputError(f"{path}: missing required column {column!r}")
    return table[column]


def _pick(mapping, value, default, what):
    if value is None:
        return default
    try:
        return mapping[value.lower()]
    except KeyError:
        raise ConfigurationError(
            f"--weights for {what} must be one of {sorted(mapping)}, got {value!r}"
        ) from None


def _metrics(summary, rejected, truth, partition=None):
    if truth is None:
        return
    theta = truth.astype(int)
    fdp, power = fdp_power(rejected, theta)
    summary["metrics"] = {"fdp": fdp, "power": power}
    if partition is not None:
        mask = np.zeros(theta.size, dtype=bool)
        mask[rejected] = True
        per_group = []
        for l in range(partition.n_groups):
            idx = partition.indices(l)
            f, w = fdp_power(np.nonzero(mask[idx])[0], theta[idx])
            label = partition.names[l] if partition.names else l + 1
            per_group.append({"group": label, "fdp": f, "power": w})
        summary["metrics"]["groups"] = per_group


def _write_outputs(args, evalues, weights, rejected, summary):
    out = Path(args.out) if args.out else Path("evmt_rejections.csv")
    mask = np.zeros(evalues.size, dtype=bool)
    mask[rejected] = True
    with open(out, "w", encoding="utf-8") as handle:
        handle.write("index,rejected,evalue,weight\n")
        for i in range(evalues.size):
            handle.write(f"{i + 1},{int(mask[i])},{evalues[i]:.10g},{weights[i]:.10g}\n")
    summary["n"] = int(evalues.size)
    summary["n_rejected"] = int(mask.sum())
    summary["rejections_csv"] = str(out)
    text = json.dumps(summary, indent=2, default=str)
    out.with_suffix(".json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _single_table(args):
    if not args.input or len(args.input) != 1:
        raise InputError("this subcommand needs exactly one --input CSV")
    return read_table(args.input[0]), args.input[0]


def _cmd_threshold(args, kind):
    table, path = _single_table(args)
    p = _require(table, "pvalue", path)
    spec = ProcedureSpec(kind=kind, alpha=args.alpha)
    res = solve_threshold(p, spec)
    evalues = procedure_to_evalues(p, spec, res)
    summary = {
        "command": kind,
        "alpha": args.alpha,
        "feasible": res.feasible,
        "threshold": res.threshold,
        "false_rejection_estimate": res.m_at_T,
    }
    _metrics(summary, res.rejected, table.get("truth"))
    return _write_outputs(args, evalues, np.ones(p.size), res.rejected, summary)


def _cmd_fbc(args):
    table, path = _single_table(args)
    p = _require(table, "pvalue", path)
    covars = _covariates(table)
    model = fit_lfdr_em(p, covars)
    curves = model.curves(covars if covars is not None else np.empty((p.size, 0)))
    spec = ProcedureSpec(kind="fbc", alpha=args.alpha, rejection_functions=curves)
    res = solve_threshold(p, spec)
    evalues = procedure_to_evalues(p, spec, res)
    summary = {
        "command": "fbc",
        "alpha": args.alpha,
        "feasible": res.feasible,
        "threshold": res.threshold,
        "false_rejection_estimate": res.m_at_T,
        "model_converged": model.converged,
    }
    _metrics(summary, res.rejected, table.get("truth"))
    return _write_outputs(args, evalues, np.ones(p.size), res.rejected, summary)


def _cmd_ebh(args):
    table, path = _single_table(args)
    e = as_evalues(_require(table, "evalue", path))
    rejected = ebh_select(e, args.alpha) if e.any() else np.empty(0, dtype=int)
    summary = {"command": "ebh", "alpha": args.alpha}
    _metrics(summary, rejected, table.get("truth"))
    return _write_outputs(args, e, np.ones(e.size), rejected, summary)


def _cmd_groups(args):
    table, path = _single_table(args)
    p = _require(table, "pvalue", path)
    labels = _require(table, "group", path)
    part = GroupPartition.from_labels(labels)
    scheme = _pick(_GROUP_SCHEMES, args.weights, "adaptive", "groups")
    report = run_grouped_ebh(p, part, args.alpha, scheme=scheme)
    summary = {
        "command": "groups",
        "alpha": args.alpha,
        "scheme": report.scheme,
        "thresholds": [
            {
                "group": part.names[l] if part.names else l + 1,
                "threshold": report.thresholds[l].threshold,
                "feasible": report.thresholds[l].feasible,
                "group_rejections": int(report.thresholds[l].rejected.size),
            }
            for l in range(part.n_groups)
        ],
    }
    _metrics(summary, report.rejected, table.get("truth"), part)
    return _write_outputs(args, report.evalues, report.weights, report.rejected, summary)


def _cmd_hybrid(args):
    table, path = _single_table(args)
    p = _require(table, "pvalue", path)
    mode = _pick(_HYBRID_MODES, args.weights, "adaptive", "hybrid")
    config = HybridConfig(alpha_ebh=args.alpha, weight_mode=mode)
    evalues, w_bh, w_bc = _hybrid_evalues(p, config)
    rejected = ebh_select(evalues, args.alpha) if evalues.any() else np.empty(0, dtype=int)
    summary = {
        "command": "hybrid",
        "alpha": args.alpha,
        "weight_mode": mode,
        "alpha_bh": config.alpha_bh,
        "alpha_bc": config.alpha_bc,
    }
    _metrics(summary, rejected, table.get("truth"))
    return _write_outputs(args, evalues, w_bh + w_bc, rejected, summary)


def _cmd_adaptive(args):
    table, path = _single_table(args)
    p = _require(table, "pvalue", path)
    covars = _covariates(table)
    mode = _pick(_ADAPTIVE_MODES, args.weights, "cheap", "adaptive")
    seed = args.seed
    if seed is None:
        seed = secrets.randbits(31)
        print(f"seed = {seed}")
    pipe = structure_pipeline(
        p, covars, args.alpha, mode=mode, rng=np.random.default_rng(seed)
    )
    summary = {
        "command": "adaptive",
        "alpha": args.alpha,
        "weight_mode": mode,
        "seed": seed,
        "fold_level": pipe["alpha_fbc"],
        "thresholds": [
            {"fold": g + 1, "threshold": t.threshold, "feasible": t.feasible}
            for g, t in enumerate(pipe["thresholds"])
        ],
    }
    _metrics(summary, pipe["rejected"], table.get("truth"))
    return _write_outputs(args, pipe["evalues"], pipe["weights"], pipe["rejected"], summary)


def _read_stat_column(path) -> np.ndarray:
    table = read_table(path)
    numeric = [c for c in table if c != "group"]
    if len(numeric) != 1:
        raise InputError(f"{path}: expected a single statistic column, got {sorted(table)}")
    return table[numeric[0]]


def _cmd_knockoff(args):
    if not args.input or len(args.input) != 2:
        raise InputError("knockoff-combine needs exactly two --input CSV files")
    w_a = _read_stat_column(args.input[0])
    w_b = _read_stat_column(args.input[1])
    if w_a.size != w_b.size:
        raise InputError("the two statistic files must have the same number of rows")
    alpha_ko = args.alpha / 2.0
    evalues = 0.5 * knockoff_evalues(w_a, alpha_ko) + 0.5 * knockoff_evalues(w_b, alpha_ko)
    rejected = ebh_select(evalues, args.alpha) if evalues.any() else np.empty(0, dtype=int)
    summary = {
        "command": "knockoff-combine",
        "alpha": args.alpha,
        "alpha_per_family": alpha_ko,
        "combination_weights": [0.5, 0.5],
    }
    return _write_outputs(args, evalues, np.full(w_a.size, 1.0), rejected, summary)


def _cmd_simulate(args):
    overrides = {}
    if args.input:
        if len(args.input) != 1:
            raise InputError("simulate accepts at most one --input config file")
        config = SimulationConfig.from_file(args.input[0])
        overrides = {
            "setting": config.setting,
            "parameters": dict(config.parameters),
            "replications": config.replications,
            "seed": config.seed,
            "target_alpha": config.target_alpha,
        }
    if args.setting:
        overrides["setting"] = args.setting
    if "setting" not in overrides:
        raise ConfigurationError("simulate needs --setting or a config file")
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.seed is not None:
        overrides["seed"] = args.seed
    elif "seed" not in overrides:
        seed = secrets.randbits(31)
        print(f"seed = {seed}")
        overrides["seed"] = seed
    if args.alpha is not None:
        overrides["target_alpha"] = args.alpha
    config = SimulationConfig(**overrides)

    setting = config.setting
    if setting in ("E1", "E2", "F1", "F2", "F3"):
        methods = _DEFAULT_METHODS["grouped"]
    elif setting in ("S1", "S2"):
        methods = _DEFAULT_METHODS["scores"]
    else:
        methods = _DEFAULT_METHODS[setting]
    report = run_campaign(config, methods)
    out = Path(args.out) if args.out else Path("evmt_metrics.csv")
    report.to_csv(out)
    print(report.to_json())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.alpha is None and args.subcommand != "simulate":
        args.alpha = 0.05
    try:
        if args.subcommand in ("bh", "bc"):
            return _cmd_threshold(args, args.subcommand)
        if args.subcommand == "storey":
            return _cmd_threshold(args, "storey")
        if args.subcommand == "fbc":
            return _cmd_fbc(args)
        if args.subcommand == "ebh":
            return _cmd_ebh(args)
        if args.subcommand == "groups":
            return _cmd_groups(args)
        if args.subcommand == "hybrid":
            return _cmd_hybrid(args)
        if args.subcommand == "adaptive":
            return _cmd_adaptive(args)
        if args.subcommand == "knockoff-combine":
            return _cmd_knockoff(args)
        return _cmd_simulate(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
