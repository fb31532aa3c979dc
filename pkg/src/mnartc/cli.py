"""Command-line interface.

Subcommands: simulate, fit, predict, eval, test-mnar, select-rank,
diagnose.  Every stochastic subcommand takes an explicit seed (simulate
reads it from its config file), and identical inputs plus identical seeds
produce byte-identical output files.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .errors import MnartcError, ParseError
from .families import FAMILY_KINDS, Family
from .fitting import FitOptions, fit, select_rank
from .inference import test_mnar
from .missingness import obs_prob, slice_diagnostics
from .simulate import PROTOCOLS, ScenarioSpec, run_experiment
from .tensors import reconstruct_full

__all__ = ["main", "build_parser"]

_SIM_CSV_COLUMNS = (
    "replicate", "seed", "rmse_missing", "auc_missing", "d_metric", "baseline_rmse",
    "selected_rank", "b1_hat", "z", "p_value", "ci_lower", "ci_upper", "reject", "error",
)


def _dims_arg(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("dims must be D1,D2,D3")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError("dims must be integers") from None
    if min(dims) < 1:
        raise argparse.ArgumentTypeError("dims must be positive")
    return dims


def _candidates_arg(text: str) -> tuple[int, ...]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            "candidates must look like 2..10 or 2,3,4"
        ) from None


def _a2_size_arg(text: str):
    text = text.strip()
    if text.endswith("%"):
        try:
            pct = float(text[:-1])
        except ValueError:
            raise argparse.ArgumentTypeError("bad percentage") from None
        if not (0.0 < pct < 100.0):
            raise argparse.ArgumentTypeError("percentage must lie in (0, 100)")
        return ("percent", pct)
    try:
        return ("count", int(text))
    except ValueError:
        raise argparse.ArgumentTypeError("a2-size must be an integer or a percentage") from None


def _resolve_a2_size(spec, dims) -> int:
    kind, value = spec
    if kind == "count":
        return int(value)
    total = int(np.prod(dims))
    return int(round(total * value / 100.0))


def _family_from_args(args) -> Family:
    phi0 = getattr(args, "phi0", None)
    if phi0 is None:
        return Family(kind=args.family)
    return Family(kind=args.family, phi0=phi0)


def _fit_options(args, seed=None) -> FitOptions:
    opts = FitOptions(seed=args.seed if seed is None else seed)
    if getattr(args, "max_iters", None) is not None:
        opts = replace(opts, max_outer_iters=args.max_iters)
    if getattr(args, "tol", None) is not None:
        opts = replace(opts, rel_tol=args.tol)
    return opts


def _dump_json(doc, path=None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


# ---------------------------------------------------------------------------
# simulate

_CONFIG_REQUIRED = ("family", "dims", "rank", "c", "b0", "b1", "protocol", "seed")


def _load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    for key in _CONFIG_REQUIRED:
        if key not in raw:
            raise ParseError(f"{path}: missing config key {key!r}")
    known = set(_CONFIG_REQUIRED) | {
        "phi0", "factor_law", "replicates", "a2_size", "alpha", "candidates",
        "max_outer_iters", "rel_tol",
    }
    unknown = set(raw) - known
    if unknown:
        raise ParseError(f"{path}: unknown config keys {sorted(unknown)}")
    return raw


def _config_to_scenario(raw) -> tuple[ScenarioSpec, dict]:
    def as_dims(value):
        if isinstance(value, str):
            return tuple(int(p) for p in value.split(","))
        return tuple(int(p) for p in value)

    family = Family(kind=str(raw["family"]), phi0=float(raw.get("phi0", 1.0)))
    dims = as_dims(raw["dims"])
    if len(dims) != 3:
        raise ParseError("dims must have three components")
    spec = ScenarioSpec(
        family=family,
        dims=dims,
        rank=int(raw["rank"]),
        c=float(raw["c"]),
        b0_star=float(raw["b0"]),
        b1_star=float(raw["b1"]),
        factor_law=str(raw.get("factor_law", "gaussian_shifted")),
        replicates=int(raw.get("replicates", 1)),
        seed=int(raw["seed"]),
    )
    protocol = str(raw["protocol"])
    if protocol not in PROTOCOLS:
        raise ParseError(f"unknown protocol {protocol!r}")
    extras = {"protocol": protocol}
    if "a2_size" in raw:
        text = str(raw["a2_size"])
        size = _resolve_a2_size(_a2_size_arg(text), dims)
        extras["a2_size"] = size
    if "alpha" in raw:
        extras["alpha"] = float(raw["alpha"])
    if "candidates" in raw:
        value = raw["candidates"]
        if isinstance(value, str):
            extras["candidates"] = _candidates_arg(value)
        else:
            extras["candidates"] = tuple(int(x) for x in value)
    opts = FitOptions(seed=spec.seed)
    if "max_outer_iters" in raw:
        opts = replace(opts, max_outer_iters=int(raw["max_outer_iters"]))
    if "rel_tol" in raw:
        opts = replace(opts, rel_tol=float(raw["rel_tol"]))
    extras["fit_options"] = opts
    return spec, extras


def _cmd_simulate(args) -> int:
    raw = _load_config(args.config)
    try:
        spec, extras = _config_to_scenario(raw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ParseError(f"{args.config}: {exc}") from None
    protocol = extras.pop("protocol")
    fit_options = extras.pop("fit_options")
    replicates, aggregate = run_experiment(
        spec, protocol, fit_options=fit_options, jobs=args.jobs, **extras
    )
    by_index = {r.seed - spec.seed: r for r in replicates}
    errors = {f["replicate"]: f["error"] for f in aggregate["failures"]}
    lines = [",".join(_SIM_CSV_COLUMNS)]
    for i in range(spec.replicates):
        row = {"replicate": i, "seed": spec.seed + i}
        rep = by_index.get(i)
        if rep is None:
            row["error"] = errors.get(i, "failed")
        else:
            row.update(
                rmse_missing=rep.rmse_missing,
                auc_missing=rep.auc_missing,
                d_metric=rep.d_metric,
                baseline_rmse=rep.baseline_rmse,
                selected_rank=rep.selected_rank,
            )
            if rep.test is not None:
                row.update(
                    b1_hat=rep.test.b1_hat,
                    z=rep.test.z,
                    p_value=rep.test.p_value,
                    ci_lower=rep.test.ci_lower,
                    ci_upper=rep.test.ci_upper,
                    reject=rep.test.p_value < rep.test.alpha,
                )
        cells = []
        for col in _SIM_CSV_COLUMNS:
            value = row.get(col)
            cells.append(str(value) if col == "error" and value else _fmt(value))
        lines.append(",".join(cells))
    Path(args.out_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _dump_json(aggregate, args.out_json)
    return 0


# ---------------------------------------------------------------------------
# model-producing commands


def _cmd_fit(args) -> int:
    fam = _family_from_args(args)
    data = dataio.read_coo(args.input, args.dims, binarize_at=args.binarize_at)
    opts = _fit_options(args)
    summary = {"input": str(args.input), "family": fam.kind}
    if args.select_rank is not None:
        chosen, table = select_rank(data, fam, args.select_rank, opts)
        summary["bic_table"] = [[int(r), b] for r, b in table]
        summary["selected_rank"] = int(chosen)
        rank = chosen
    else:
        rank = args.rank
    report = fit(data, rank, fam, opts)
    dataio.write_model(
        report.state, args.output,
        objective_trace=report.objective_trace,
        converged=report.converged,
        outer_iters=report.outer_iters,
    )
    summary.update(
        rank=int(rank),
        objective=float(report.objective_trace[-1]),
        converged=bool(report.converged),
        outer_iters=int(report.outer_iters),
        model_file=str(args.output),
        warnings=list(report.warnings),
    )
    _dump_json(summary)
    return 0


def _cmd_select_rank(args) -> int:
    fam = _family_from_args(args)
    data = dataio.read_coo(args.input, args.dims, binarize_at=args.binarize_at)
    opts = _fit_options(args)
    chosen, table = select_rank(data, fam, args.candidates, opts)
    doc = {
        "selected_rank": int(chosen),
        "bic_table": [[int(r), b] for r, b in table],
    }
    _dump_json(doc, args.output)
    if args.output is not None:
        _dump_json(doc)
    return 0


def _cmd_test_mnar(args) -> int:
    fam = _family_from_args(args)
    data = dataio.read_coo(args.input, args.dims, binarize_at=args.binarize_at)
    opts = _fit_options(args)
    a2 = _resolve_a2_size(args.a2_size, args.dims)
    result = test_mnar(data, fam, args.rank, opts, a2_size=a2, alpha=args.alpha)
    doc = {
        "a2_size": int(a2),
        "alpha": result.alpha,
        "b0_hat": result.b0_hat,
        "b1_hat": result.b1_hat,
        "info": np.asarray(result.info).tolist(),
        "z": result.z,
        "p_value": result.p_value,
        "ci_lower": result.ci_lower,
        "ci_upper": result.ci_upper,
        "z_wald": result.z_wald,
        "p_value_wald": result.p_value_wald,
        "reject": bool(result.p_value < result.alpha),
    }
    _dump_json(doc, args.output)
    if args.output is not None:
        _dump_json(doc)
    return 0


# ---------------------------------------------------------------------------
# model-consuming commands


def _read_indices(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() not in ("i,j,k", "i,j,k,y"):
        raise ParseError(f"{path}:1: expected header 'i,j,k'")
    has_value = text[0].strip() == "i,j,k,y"
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != (4 if has_value else 3):
            raise ParseError(f"{path}:{lineno}: bad field count")
        try:
            rows.append([int(parts[0]), int(parts[1]), int(parts[2])])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def _cmd_predict(args) -> int:
    state = dataio.read_model(args.model)
    x_hat = reconstruct_full(state.cp).data
    mean = state.fam.cumulant_d1(x_hat)
    d1, d2, d3 = state.cp.dims
    if args.indices is not None:
        triples = _read_indices(args.indices)
        for i, j, k in triples:
            if not (0 <= i < d1 and 0 <= j < d2 and 0 <= k < d3):
                raise IndexError(f"index ({i},{j},{k}) out of bounds for dims {(d1, d2, d3)}")
    else:
        grid = np.indices((d1, d2, d3)).reshape(3, -1).T
        triples = grid
    lines = ["i,j,k,xhat,mean"]
    for i, j, k in triples:
        lines.append(
            f"{int(i)},{int(j)},{int(k)},"
            f"{float(x_hat[i, j, k])!r},{float(mean[i, j, k])!r}"
        )
    Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _cmd_eval(args) -> int:
    state = dataio.read_model(args.model)
    holdout = dataio.read_coo(args.holdout, state.cp.dims, binarize_at=args.binarize_at)
    x_hat = reconstruct_full(state.cp).data
    mean = state.fam.cumulant_d1(x_hat)
    rows = (holdout.omega[:, 0], holdout.omega[:, 1], holdout.omega[:, 2])
    pred = mean[rows]
    y = holdout.y_obs
    if args.metric == "rmse":
        denom = float(np.linalg.norm(y))
        if denom == 0.0:
            from .errors import MetricError

            raise MetricError("holdout values are all zero; relative error undefined")
        value = float(np.linalg.norm(pred - y) / denom)
    else:
        from .simulate import auc_missing

        value = auc_missing(pred, y)
    text = json.dumps(value) + "\n"
    sys.stdout.write(text)
    if args.output is not None:
        Path(args.output).write_text(text, encoding="utf-8")
    return 0


def _cmd_diagnose(args) -> int:
    state = dataio.read_model(args.model)
    x_hat = reconstruct_full(state.cp).data
    p = obs_prob(state.theta, x_hat)
    diag = slice_diagnostics(p)
    doc = {"p_bar": diag.p_bar, "q_bar": diag.q_bar}
    _dump_json(doc, args.output)
    if args.output is not None:
        _dump_json(doc)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_io_model_args(sub, with_rank=True):
    sub.add_argument("--input", required=True, help="coordinate CSV of observed cells")
    sub.add_argument("--dims", required=True, type=_dims_arg, help="grid sizes D1,D2,D3")
    sub.add_argument("--family", required=True, choices=FAMILY_KINDS)
    sub.add_argument("--phi0", type=float, default=None,
                     help="gaussian dispersion (noise variance); default 1")
    sub.add_argument("--binarize-at", type=float, default=None,
                     help="threshold mapping values to 1 when y >= t, else 0")
    sub.add_argument("--seed", required=True, type=int, help="seed for the fit warm start")
    sub.add_argument("--max-iters", type=int, default=None, help="outer iteration cap")
    sub.add_argument("--tol", type=float, default=None, help="relative objective tolerance")
    if with_rank:
        sub.add_argument("--rank", type=int, default=None, help="number of CP components")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnartc",
        description="Low-rank tensor completion under missing-not-at-random observation",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="run replicated simulation scenarios")
    sim.add_argument("--config", required=True, help="scenario config (key=value or JSON)")
    sim.add_argument("--out-csv", required=True, help="per-replicate metrics CSV")
    sim.add_argument("--out-json", required=True, help="aggregate summary JSON")
    sim.add_argument("--jobs", type=int, default=1, help="replicate-level parallelism")
    sim.set_defaults(func=_cmd_simulate)

    fit_cmd = commands.add_parser("fit", help="fit the model to a coordinate file")
    _add_io_model_args(fit_cmd)
    fit_cmd.add_argument("--select-rank", type=_candidates_arg, default=None,
                         metavar="A..B", help="choose the rank by BIC over candidates")
    fit_cmd.add_argument("--output", required=True, help="model JSON path")
    fit_cmd.set_defaults(func=_cmd_fit)

    sel = commands.add_parser("select-rank", help="BIC rank selection")
    _add_io_model_args(sel, with_rank=False)
    sel.add_argument("--candidates", required=True, type=_candidates_arg, metavar="A..B")
    sel.add_argument("--output", default=None, help="result JSON path (default stdout)")
    sel.set_defaults(func=_cmd_select_rank)

    tst = commands.add_parser("test-mnar", help="sample-splitting missingness test")
    _add_io_model_args(tst)
    tst.add_argument("--a2-size", required=True, type=_a2_size_arg,
                     help="held-out cell count, or a percentage like 10%%")
    tst.add_argument("--alpha", type=float, default=0.05, help="test level")
    tst.add_argument("--output", default=None, help="result JSON path (default stdout)")
    tst.set_defaults(func=_cmd_test_mnar)

    pred = commands.add_parser("predict", help="write predictions from a model file")
    pred.add_argument("--model", required=True)
    pred.add_argument("--indices", default=None,
                      help="CSV of cells to predict (header i,j,k); default all cells")
    pred.add_argument("--output", required=True, help="prediction CSV path")
    pred.set_defaults(func=_cmd_predict)

    ev = commands.add_parser("eval", help="score a model against held-out cells")
    ev.add_argument("--model", required=True)
    ev.add_argument("--holdout", required=True, help="coordinate CSV of held-out cells")
    ev.add_argument("--metric", required=True, choices=("rmse", "auc"))
    ev.add_argument("--binarize-at", type=float, default=None)
    ev.add_argument("--output", default=None, help="also write the value to this file")
    ev.set_defaults(func=_cmd_eval)

    diag = commands.add_parser("diagnose", help="worst-slice observation diagnostics")
    diag.add_argument("--model", required=True)
    diag.add_argument("--output", default=None, help="result JSON path (default stdout)")
    diag.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fit":
        if (args.rank is None) == (args.select_rank is None):
            parser.error("fit needs exactly one of --rank or --select-rank")
    try:
        return args.func(args)
    except (MnartcError, OSError, IndexError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
