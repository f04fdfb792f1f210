"""Command-line entry point: ``deeplcc <command> [options]``.

Exit status is 0 on success, 2 on invalid input or insufficient excitation,
and 3 when the controller or solver fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig, atomic_path, atomic_write_text, load
from .controller import MpcController
from .datamat import (MatrixKind, column_count, data_matrix, excitation_order, is_hankel_exciting,
                      min_samples, numerical_rank, partition)
from .errors import ControllerFault, DeepLccError, ExcitationFailure
from .privacy import MaskedPipeline, diversity_witnesses, naive_attacker_estimate, rmse
from .sim import TrajectoryRecord, summarize_run_csv

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3


def _stamp() -> str:
    return time.strftime("generated %Y-%m-%dT%H:%M:%S%z")


def _fmt(x) -> str:
    return repr(float(x))


def _config(args) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args, cfg: RunConfig | None = None) -> Path:
    out = Path(args.out or (cfg.output_dir if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _load_dataset(args, cfg: RunConfig, out: Path) -> TrajectoryRecord:
    path = Path(args.data) if getattr(args, "data", None) else out / "dataset.csv"
    if not path.exists():
        raise ConfigError(f"dataset {path} not found; run 'deeplcc collect' first or pass --data")
    try:
        rec = TrajectoryRecord.from_csv(path)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if rec.u.shape[1] != cfg.fleet.m or rec.y.shape[1] != cfg.fleet.p:
        raise ConfigError(f"dataset {path} does not match the configured fleet")
    return rec


# ---------------------------------------------------------------- commands

def _certificate_text(cert, order: int, extra: list[str]) -> str:
    lines = extra + [f"excitation_order = {order}", f"exogenous_rank = {cert.rank}",
                     f"required_rank = {cert.required}",
                     f"exciting = {str(cert.exciting).lower()}"]
    return "\n".join(lines) + "\n"


def cmd_collect(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    c = cfg.controller
    order = excitation_order(MatrixKind.HANKEL, cfg.fleet.n, c.T_ini, c.N, masked=True)
    try:
        data = pipeline.collect(cfg)
    except ExcitationFailure as exc:
        if exc.certificate is not None:
            atomic_write_text(out / "certificate.txt",
                              _certificate_text(exc.certificate, order, []))
        raise
    cols = column_count(cfg.kind, data.record.T, c.T_ini + c.N)
    with atomic_path(out / "dataset.csv") as tmp:
        data.record.to_csv(tmp)
    atomic_write_text(out / "certificate.txt", _certificate_text(
        data.certificate, order,
        [f"samples = {data.record.T}", f"kind = {cfg.kind.value}", f"columns = {cols}"]))
    print(f"collected {data.record.T} samples ({cols} {cfg.kind.value} columns) -> {out}")
    return EXIT_OK


def _summary_text(outcome: pipeline.RunOutcome, extra: dict) -> str:
    m = outcome.metrics
    diags = outcome.log.diagnostics
    dims = {d.decision_dim for d in diags}
    fields = {"tag": outcome.log.tag or outcome.mode, "mode": outcome.mode,
              "total_fuel_mL": _fmt(m.total_fuel), "aave": _fmt(m.aave),
              "quadratic_cost": _fmt(m.quadratic_cost),
              "collision_events": m.collision_events, "flagged_steps": m.flagged_steps,
              "aave_excluded_steps": m.aave_excluded_steps}
    if dims:
        fields["decision_dim"] = max(dims)
    fields.update(extra)
    # wall-clock values live in the single header comment to keep the body reproducible
    head = (f"# {_stamp()}; solve_time_mean_s={m.solve_time_mean!r}; "
            f"solve_time_max_s={m.solve_time_max!r}")
    return head + "\n" + "".join(f"{k} = {v}\n" for k, v in fields.items())


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    mode = args.mode
    rec = _load_dataset(args, cfg, out) if mode in ("deeplcc", "masked") else None
    outcome = pipeline.run(cfg, mode, rec)
    extra: dict = {}
    if mode == "masked":
        plain = pipeline.run(cfg, "deeplcc", rec)
        gap = float(np.abs(outcome.log.U - plain.log.U).max(initial=0.0))
        extra["max_input_gap_vs_deeplcc"] = _fmt(gap)
        assert isinstance(outcome.controller, MaskedPipeline)
        extra["objective_gap_after_rho"] = _fmt(
            pipeline.objective_gap(plain.log, outcome.log, outcome.controller))
        extra["rho"] = _fmt(outcome.controller.rho)
    elif mode == "mpc":
        assert isinstance(outcome.controller, MpcController)
    with atomic_path(out / f"run_{mode}.csv") as tmp:
        outcome.log.to_csv(tmp)
    atomic_write_text(out / f"summary_{mode}.txt", _summary_text(outcome, extra))
    m = outcome.metrics
    print(f"{outcome.log.tag or mode}: fuel {m.total_fuel:.2f} mL, AAVE {m.aave:.5f}, "
          f"cost {m.quadratic_cost:.1f}, collisions {m.collision_events}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.logs:
        raise ConfigError("compare needs at least one run log")
    try:
        runs = [summarize_run_csv(p) for p in args.logs]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    base = runs[0]

    def pct(x, ref):
        return 100.0 * (x - ref) / ref if ref else float("nan")

    rows = [[r.path, _fmt(r.total_fuel), _fmt(pct(r.total_fuel, base.total_fuel)),
             _fmt(r.aave), _fmt(pct(r.aave, base.aave))] for r in runs]
    header = ["log", "total_fuel_mL", "fuel_delta_pct", "aave", "aave_delta_pct"]
    width = max(len(r.path) for r in runs)
    lines = [f"{'log':<{width}}  {'fuel [mL]':>12}  {'fuel %':>8}  {'AAVE':>9}  {'AAVE %':>8}"]
    for r in runs:
        lines.append(f"{r.path:<{width}}  {r.total_fuel:12.3f}  "
                     f"{pct(r.total_fuel, base.total_fuel):+8.2f}  {r.aave:9.5f}  "
                     f"{pct(r.aave, base.aave):+8.2f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _out(args)
        _write_csv(out / "compare.csv", header, rows)
        atomic_write_text(out / "compare.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_mask_demo(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    rec = _load_dataset(args, cfg, out) if args.data or (out / "dataset.csv").exists() \
        else pipeline.collect(cfg).record
    outcome = pipeline.run(cfg, "masked", rec)
    ctl = outcome.controller
    masks = ctl.masks
    m = cfg.fleet.m
    true_y = outcome.log.outputs()[: outcome.log.steps]
    true_x = masks.cav_states(true_y)
    masked_x = masks.cav_states(np.array(ctl.exchanged_y))
    masked_u = np.array(ctl.exchanged_u)
    true_u = outcome.log.U

    header = ["t"]
    for i, idx in enumerate(cfg.fleet.cav_indices):
        header += [f"s_{idx}", f"v_{idx}", f"u_{idx}",
                   f"s_{idx}_masked", f"v_{idx}_masked", f"u_{idx}_masked"]
    rows = []
    for k in range(true_u.shape[0]):
        row = [k * cfg.dt]
        for i in range(m):
            row += [true_x[k, i, 0], true_x[k, i, 1], true_u[k, i],
                    masked_x[k, i, 0], masked_x[k, i, 1], masked_u[k, i]]
        rows.append([_fmt(v) for v in row])
    _write_csv(out / "mask_demo.csv", header, rows)

    est_x, est_u = naive_attacker_estimate(masked_x, masked_u)
    e_x = rmse(est_x, true_x)
    e_u = rmse(est_u, true_u)
    lines = []
    for i, idx in enumerate(cfg.fleet.cav_indices):
        lines += [f"rmse_spacing_{idx} = {_fmt(e_x[i, 0])}",
                  f"rmse_velocity_{idx} = {_fmt(e_x[i, 1])}",
                  f"rmse_input_{idx} = {_fmt(e_u[i])}"]
    atomic_write_text(out / "attack.txt", "\n".join(lines) + "\n")

    wit = diversity_witnesses(masked_x, masked_u, cfg.witnesses, cfg.seeds()["witnesses"])
    flat = np.array([np.concatenate([w.decoded_x.ravel(), w.decoded_u.ravel()]) for w in wit])
    wrows = []
    for j, w in enumerate(wit):
        others = np.delete(flat, j, axis=0)
        sep = float(np.abs(others - flat[j]).max(axis=1).min()) if len(others) else float("inf")
        row = [j, _fmt(w.remask_residual), _fmt(sep)]
        for s, u in zip(w.state_maps, w.input_maps):
            row += [_fmt(v) for v in (*s.P.ravel(), *s.l, u.p, u.l)]
        wrows.append(row)
    wh = ["witness", "remask_residual", "min_separation"]
    for idx in cfg.fleet.cav_indices:
        wh += [f"P11_{idx}", f"P12_{idx}", f"P21_{idx}", f"P22_{idx}", f"l1_{idx}", f"l2_{idx}",
               f"p_u_{idx}", f"l_u_{idx}"]
    _write_csv(out / "witnesses.csv", wh, wrows)
    print(f"mask demo: {len(wit)} witnesses, attacker spacing RMSE "
          + ", ".join(f"{e_x[i, 0]:.3f}" for i in range(m)) + f" -> {out}")
    return EXIT_OK


def cmd_matrix_info(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    c = cfg.controller
    T_ini = args.t_ini or c.T_ini
    N = args.n_horizon or c.N
    kinds = [MatrixKind.HANKEL, MatrixKind.PAGE] if args.kind == "both" \
        else [MatrixKind(args.kind or c.matrix_kind)]
    fl = cfg.fleet
    lines = [f"T_ini = {T_ini}", f"N = {N}"]
    for kind in kinds:
        for masked in (False, True):
            lines.append(f"min_samples_{kind.value}{'_masked' if masked else ''} = "
                         f"{min_samples(kind, fl.m, fl.n, T_ini, N, masked)}")
    if args.data or (out / "dataset.csv").exists():
        rec = _load_dataset(args, cfg, out)
        lines.append(f"dataset_samples = {rec.T}")
        for kind in kinds:
            L = T_ini + N
            if column_count(kind, rec.T, L) < 1:
                lines.append(f"{kind.value}_columns = 0")
                continue
            b = partition(kind, rec.u, rec.eps, rec.y, T_ini, N)
            stack = b.stacked()
            lines += [f"{kind.value}_columns = {b.cols}",
                      f"{kind.value}_input_rank = "
                      f"{numerical_rank(data_matrix(kind, np.column_stack([rec.u, rec.eps]), L))}",
                      f"{kind.value}_stack_rank = {numerical_rank(stack)}",
                      f"{kind.value}_stack_rows = {stack.shape[0]}"]
        order = excitation_order(MatrixKind.HANKEL, fl.n, T_ini, N)
        cert = is_hankel_exciting(np.column_stack([rec.u, rec.eps]), order)
        lines.append(f"recorded_input_exciting_order_{order} = {str(cert.exciting).lower()}")
    atomic_write_text(out / "matrix_info.txt", "\n".join(lines) + "\n")
    sys.stdout.write("\n".join(lines) + "\n")
    if args.sweep:
        try:
            columns = [int(v) for v in args.sweep.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--sweep expects comma-separated integers: {exc}") from exc
        ccfg = replace(cfg, controller=replace(c, T_ini=T_ini, N=N))
        res = pipeline.column_sweep(ccfg, kinds, columns)
        _write_csv(out / "sweep.csv", ["kind", "seed_index", "columns", "quadratic_cost"],
                   [[k, s, cols, _fmt(v)] for (k, s, cols), v in sorted(res.items())])
        table = pipeline.sweep_table(res)
        _write_csv(out / "sweep_summary.csv", ["kind", "columns", "mean", "variance", "min", "max"],
                   [[r["kind"], r["columns"], _fmt(r["mean"]), _fmt(r["variance"]),
                     _fmt(r["min"]), _fmt(r["max"])] for r in table])
        for r in table:
            print(f"{r['kind']:>6} {r['columns']:>5}  mean {r['mean']:.1f}  var {r['variance']:.1f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deeplcc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML run configuration")
            p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")

    p = sub.add_parser("collect", help="record an offline dataset and its excitation report")
    common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("run", help="closed-loop scenario run")
    common(p)
    p.add_argument("--mode", choices=pipeline.MODES, default="deeplcc")
    p.add_argument("--data", help="dataset CSV (default: <out>/dataset.csv)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="fuel and AAVE table relative to the first log")
    p.add_argument("logs", nargs="+", help="run log CSV files")
    common(p, config=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("mask-demo", help="true vs exchanged signals, attacker error, witnesses")
    common(p)
    p.add_argument("--data", help="dataset CSV (collected from the seed when absent)")
    p.set_defaults(func=cmd_mask_demo)

    p = sub.add_parser("matrix-info", help="ranks, sample bounds and optional column sweep")
    common(p)
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--kind", choices=["hankel", "page", "both"])
    p.add_argument("--t-ini", type=int)
    p.add_argument("--n-horizon", type=int)
    p.add_argument("--sweep", help="comma-separated column counts")
    p.set_defaults(func=cmd_matrix_info)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ControllerFault as exc:
        print(f"error: controller failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ExcitationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DeepLccError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
