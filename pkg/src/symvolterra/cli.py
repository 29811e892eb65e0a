"""Command-line front end.

Exit codes: 0 on success, 1 on a computational failure (divergence,
failed integration, singular solve), 2 on usage or I/O errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import chaos, esn, harness, metrics, volterra

OUT_ENV = "SYMVOLTERRA_OUT"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or unreadable/unwritable files."""


class ComputationFailure(Exception):
    """Divergence or another numerical failure."""


def _out_dir(args) -> Path:
    base = args.out or os.environ.get(OUT_ENV) or "."
    return Path(base)


def _parse_sets(items: Optional[Sequence[str]]) -> dict:
    params = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"expected KEY=VALUE, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            raise UsageError(f"value for {key!r} is not a number or JSON literal") from None
    return params


def _load_trajectory(path) -> chaos.Trajectory:
    if path is None:
        raise UsageError("--data is required")
    try:
        return chaos.load_trajectory(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read trajectory {path}: {exc}") from None


def _write(path: Path, text: str) -> Path:
    try:
        return harness.write_text(path, text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _split_spec(args) -> harness.SplitSpec:
    return harness.SplitSpec(args.n_warmup, args.n_train, args.n_val)


# -------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    try:
        system = chaos.get_system(args.system)
    except KeyError:
        raise UsageError(f"unknown system {args.system!r}; choose from "
                         f"{', '.join(sorted(chaos.SYSTEMS))}") from None
    traj = chaos.generate_trajectory(system, args.n, seed=args.seed)
    out = _out_dir(args)
    path = out if out.suffix else out / f"{system.name.lower()}_seed{args.seed}"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = chaos.save_trajectory(traj, path)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None
    print(f"wrote {csv_path} ({len(traj)} points, dt={traj.dt:.6g}, lambda={traj.lam:.4g})")
    return EXIT_OK


def _fit_data(traj: chaos.Trajectory, args):
    pts = traj.points
    if args.target == "memory":
        # recall the previous input: y(n) = u(n-1)
        targets = np.vstack([np.zeros((1, pts.shape[1])), pts[:-1]])
        return pts, targets, 0
    spec = _split_spec(args)
    n = spec.n_warmup + spec.n_train
    if pts.shape[0] < n:
        raise UsageError(f"data has {pts.shape[0]} points, fit needs {n}")
    return pts[:n], None, spec.n_warmup


TN_KEYS = ("M", "D", "svd_tolerance")


def _check_keys(params: dict, allowed) -> None:
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise UsageError(f"unknown hyperparameters: {', '.join(unknown)}; "
                         f"allowed: {', '.join(allowed)}")


def cmd_fit(args) -> int:
    traj = _load_trajectory(args.data)
    params = _parse_sets(args.set)
    if args.model == "tn":
        _check_keys(params, TN_KEYS)
    else:
        _check_keys(params, [f.name for f in dataclasses.fields(esn.ESNConfig)])
    data, targets, n_warmup = _fit_data(traj, args)
    P = data.shape[1]
    meta = {"system": traj.system, "seed": traj.seed, "target": args.target,
            "dt": traj.dt, "lambda": traj.lam}
    t0 = time.perf_counter()
    if args.model == "tn":
        params.setdefault("M", 2)
        params.setdefault("D", 2)
        cfg = harness.tn_config(params, P)
        if targets is None:
            series, targets = data[n_warmup:-1], data[n_warmup + 1:]
        else:
            series = data
        try:
            model = volterra.fit_symmetric(series, targets, cfg)
        except (ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from None
        elapsed = time.perf_counter() - t0
        resid = volterra.predict_series(model, series) - targets[cfg.M - 1:]
        meta["n_rows"] = int(resid.shape[0])
        model = volterra.VolterraModel(model.config, model.basis, model.coefficients,
                                       model.singular_values, model.rank, metadata=meta)
        save = volterra.save_model
    else:
        try:
            cfg = harness.esn_config(params)
        except TypeError as exc:
            raise UsageError(str(exc)) from None
        if targets is not None:
            raise UsageError("the ESN supports only --target next")
        model = esn.train(cfg, data, n_warmup)
        elapsed = time.perf_counter() - t0
        X = esn.drive(model, data[:-1], n_warmup, data.shape[0] - 1 - n_warmup)
        resid = esn.readout(model, X) - data[n_warmup + 1:]
        meta["n_rows"] = int(resid.shape[0])
        model = esn.ESNModel(model.config, model.W, model.v, model.W_out, model.b, meta)
        save = esn.save_model
    if not np.all(np.isfinite(resid)):
        raise ComputationFailure("training produced non-finite outputs")
    out = _out_dir(args)
    path = out if out.suffix == ".json" else out / f"model_{args.model}.json"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        save(model, path)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None
    rms = float(np.sqrt(np.mean(resid**2)))
    print(f"wrote {path}")
    print(f"train_time_seconds={elapsed:.6g} residual_rms={rms:.6g} "
          f"residual_max={float(np.max(np.abs(resid))):.6g} rows={resid.shape[0]}")
    return EXIT_OK


def _load_grid(path) -> harness.GridSpec:
    if path is None:
        return harness.GridSpec()
    try:
        with open(path) as fh:
            return harness.GridSpec.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read grid {path}: {exc}") from None


def cmd_grid(args) -> int:
    traj = _load_trajectory(args.data)
    grid = _load_grid(args.grid)
    spec = _split_spec(args)
    if len(traj) < spec.total:
        raise UsageError(f"data has {len(traj)} points, grid search needs {spec.total}")
    try:
        best, table = harness.grid_search(args.model, traj, grid, spec, args.jobs,
                                          esn_seed=args.seed)
    except harness.AllDivergentError as exc:
        raise ComputationFailure(str(exc)) from None
    out = _out_dir(args)
    rows = harness.trial_rows(table)
    for row, trial in zip(rows, table):
        row["selected"] = trial is best
    if args.format == "csv":
        path = _write(out / f"grid_{args.model}.csv", harness.table_csv(rows))
    else:
        report = {"conventions": harness.conventions(spec, grid),
                  "data": {"system": traj.system, "seed": traj.seed},
                  "selected": best.to_dict(), "trials": [t.to_dict() for t in table]}
        path = _write(out / f"grid_{args.model}.json", harness.dumps(report))
    print(f"wrote {path} ({len(table)} trials)")
    print("selected " + json.dumps(best.params, sort_keys=True)
          + f" val_score={best.val_score:.6g}")
    return EXIT_OK


def _load_model(path, traj: chaos.Trajectory):
    if path is None:
        raise UsageError("--model is required")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from None
    kind = data.get("kind")
    try:
        if kind == "volterra":
            model = volterra.model_from_dict(data)
            P = model.config.P
        elif kind == "esn":
            model = esn.model_from_dict(data)
            P = model.P
        elif kind == "replay":
            return harness.ReplayModel(traj.points), "replay"
        else:
            raise UsageError(f"unknown model kind {kind!r} in {path}")
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed model file {path}: {exc}") from None
    if P != traj.P:
        raise UsageError(f"model expects P={P} channels, data has P={traj.P}")
    return model, kind


def cmd_eval(args) -> int:
    traj = _load_trajectory(args.data)
    model, kind = _load_model(args.model, traj)
    spec = _split_spec(args)
    n_fit = spec.n_warmup + spec.n_train
    if len(traj) < spec.total or n_fit < args.n_ini:
        raise UsageError(f"data has {len(traj)} points, evaluation needs {spec.total}")
    pts = traj.points
    e_bar = metrics.mean_pairwise_distance(pts[:n_fit])
    st = harness.evaluate_short_term(model, pts[n_fit - args.n_ini:spec.total], traj.lam,
                                     traj.dt, e_bar, args.n_ics, args.n_ini, args.n_pred,
                                     args.delta)
    history = pts[spec.n_warmup:n_fit] if kind == "volterra" else pts[:n_fit]
    cl = harness.evaluate_climate(model, history, pts[n_fit:spec.total])
    summary = dict(st.summary(), wasserstein=harness._json_float(cl.score),
                   climate_divergent=cl.divergent)
    meta = {"system": traj.system, "seed": traj.seed, "lambda": traj.lam, "dt": traj.dt,
            "delta": args.delta, "n_pred": args.n_pred, "n_ini": args.n_ini,
            "n_ics": args.n_ics, "e_bar": e_bar, "model_kind": kind}
    out = _out_dir(args)
    if args.format == "csv":
        row = dict(meta)
        row.update(summary)
        path = _write(out / "eval.csv", harness.table_csv([row]))
    else:
        report = {"conventions": harness.conventions(spec, None, args.n_ics, args.n_ini,
                                                     args.n_pred, args.delta),
                  "metadata": meta, "metrics": summary,
                  "per_ic": {"smape": list(st.smape_values), "vpt": list(st.vpt_values)}}
        path = _write(out / "eval.json", harness.dumps(report))
    fig1 = {"system": traj.system, "seed": traj.seed, "model": kind,
            "smape_mean": st.smape_mean, "smape_stderr": st.smape_stderr,
            "vpt_mean": st.vpt_mean, "vpt_stderr": st.vpt_stderr,
            "n_censored": st.n_censored, "n_ics": st.n_ics,
            "wasserstein": summary["wasserstein"], "climate_divergent": cl.divergent,
            "lambda": traj.lam, "dt": traj.dt}
    _write(out / "fig1.csv", harness.table_csv([fig1], harness.FIG1_COLUMNS))
    print(f"wrote {path}")
    print(f"smape={st.smape_mean:.6g}+-{st.smape_stderr:.3g} vpt={st.vpt_mean:.6g}"
          f"+-{st.vpt_stderr:.3g} censored={st.n_censored} wasserstein={cl.score:.6g}")
    return EXIT_OK


def cmd_appendix(args) -> int:
    result = harness.appendix_experiment(seed=args.seed)
    out = _out_dir(args)
    keys = list(result.profiles)
    names = [f"{kind}_N{n}" for kind, n in keys]
    if args.format == "csv":
        path = _write(out / "appendix_table.csv", harness.table_csv(list(result.rows)))
        depth = max(len(v) for v in result.profiles.values())
        sigma_rows = []
        for i in range(depth):
            row = {"index": i + 1}
            for name, key in zip(names, keys):
                s = result.profiles[key]
                row[name] = float(s[i]) if i < len(s) else ""
            sigma_rows.append(row)
        _write(out / "appendix_sigma.csv", harness.table_csv(sigma_rows, ["index"] + names))
    else:
        report = {"seed": args.seed, "rows": list(result.rows),
                  "singular_values": {n: result.profiles[k].tolist()
                                      for n, k in zip(names, keys)}}
        path = _write(out / "appendix.json", harness.dumps(report))
    for row in result.rows:
        print(f"{row['input']:>12} N={row['N']:<4} R={row['R']} rank(U)={row['rank_U']} "
              f"rank(UU^T)={row['rank_UUt']} S={row['S']:.3g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    systems = [s.strip() for s in args.system.split(",") if s.strip()]
    for name in systems:
        try:
            chaos.get_system(name)
        except KeyError:
            raise UsageError(f"unknown system {name!r}") from None
    grid = _load_grid(args.grid)
    spec = _split_spec(args)
    families = [f for f in args.model.split(",")] if args.model else list(harness.FAMILIES)
    if any(f not in harness.FAMILIES for f in families):
        raise UsageError(f"--model must be a comma list of {', '.join(harness.FAMILIES)}")
    tasks = []
    for name in systems:
        for seed in range(args.seed, args.seed + args.n_seeds):
            try:
                task = harness.run_task(name, seed, grid, spec, families, args.n_ics,
                                        args.n_ini, args.n_pred, args.delta,
                                        timing_repeats=args.timing_repeats, jobs=args.jobs)
            except harness.AllDivergentError as exc:
                raise ComputationFailure(f"{name} seed {seed}: {exc}") from None
            tasks.append(task)
            for f, t in task.selected.items():
                print(f"{task.system} seed={seed} {f}: vpt={t.test['vpt_mean']:.4g} "
                      f"smape={t.test['smape_mean']:.4g} wasserstein={t.test['wasserstein']}")
    out = _out_dir(args)
    rows = harness.fig1_rows(tasks)
    if args.format == "csv":
        path = _write(out / "fig1.csv", harness.table_csv(rows, harness.FIG1_COLUMNS))
    else:
        path = _write(out / "fig1.json", harness.dumps(
            {"conventions": harness.conventions(spec, grid, args.n_ics, args.n_ini,
                                                args.n_pred, args.delta),
             "rows": rows}))
    _write(out / "tasks.json", harness.dumps([harness.task_to_dict(t) for t in tasks]))
    if args.timing_repeats:
        _write(out / "timing.csv", harness.table_csv(harness.timing_rows(tasks),
                                                     harness.TIMING_COLUMNS))
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symvolterra",
        description="Symmetric Volterra (tensor network) vs echo state network forecasting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, fmt=True):
        p.add_argument("--out", help=f"output path or directory (default ${OUT_ENV} or .)")
        p.add_argument("--seed", type=int, default=0)
        if data:
            p.add_argument("--data", help="trajectory file (.csv with .json sidecar)")
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default="csv")

    def splits(p):
        p.add_argument("--n-warmup", type=int, default=1000)
        p.add_argument("--n-train", type=int, default=5000)
        p.add_argument("--n-val", type=int, default=5000)

    def short_term(p):
        p.add_argument("--n-ics", type=int, default=harness.DEFAULT_N_ICS)
        p.add_argument("--n-ini", type=int, default=harness.DEFAULT_N_INI)
        p.add_argument("--n-pred", type=int, default=harness.DEFAULT_N_PRED)
        p.add_argument("--delta", type=float, default=harness.DEFAULT_DELTA)

    p = sub.add_parser("generate", help="integrate a system and write a trajectory")
    p.add_argument("--system", required=True)
    p.add_argument("--n", type=int, default=chaos.DEFAULT_N_POINTS)
    common(p, data=False, fmt=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a model and write it as JSON")
    p.add_argument("--model", choices=("tn", "esn"), required=True)
    p.add_argument("--target", choices=("next", "memory"), default="next",
                   help="next-step prediction or recall of the previous input")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="hyperparameter, e.g. M=4 or spectral_radius=0.9")
    common(p, fmt=False)
    splits(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="grid search on the validation piece")
    p.add_argument("--model", choices=("tn", "esn"), required=True)
    p.add_argument("--grid", help="JSON file overriding the default grids")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    splits(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="short-term and climate metrics on a test trajectory")
    p.add_argument("--model", required=True, help="model JSON written by fit")
    common(p)
    splits(p)
    short_term(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("appendix", help="rank/symmetry study with singular value dumps")
    common(p, data=False)
    p.set_defaults(func=cmd_appendix)

    p = sub.add_parser("benchmark", help="full protocol over systems and seeds")
    p.add_argument("--system", default="lorenz,rossler", help="comma separated names")
    p.add_argument("--model", default=None, help="comma list of tn,esn (default both)")
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--grid")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing-repeats", type=int, default=0,
                   help="also time the selected fits (written to timing.csv)")
    common(p, data=False)
    splits(p)
    short_term(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ComputationFailure, chaos.IntegrationError, np.linalg.LinAlgError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
