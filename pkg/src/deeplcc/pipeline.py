"""End-to-end runs shared by the command line and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .controller import CostWeights, MpcController, deeplcc_controller
from .datamat import MatrixKind, excitation_order, partition, samples_for_columns
from .model import linear_model
from .privacy import MaskedPipeline, masked_blocks_from_record, masked_controller
from .sim import (CollectedData, MetricsReport, NoiseSpec, RunLog, TrajectoryRecord, collect_data,
                  metrics, quadratic_cost, simulate)

MODES = ("deeplcc", "masked", "mpc", "hdv")


def collect(cfg: RunConfig, T: int | None = None, rng: np.random.Generator | None = None,
            check: bool = True) -> CollectedData:
    """Offline data per the config; the exogenous excitation is certified at the masked order."""
    c = cfg.controller
    rng = rng if rng is not None else cfg.seeds()["excitation"]
    order = excitation_order(MatrixKind.HANKEL, cfg.fleet.n, c.T_ini, c.N, masked=True)
    return collect_data(cfg.fleet, cfg.ovm, cfg.v_star, T or cfg.data_samples(),
                        input_hw=cfg.data.input_half_width, head_hw=cfg.data.head_half_width,
                        noise=cfg.noise, dt=cfg.dt, rng=rng,
                        excitation_order=order if check else None)


def weights(cfg: RunConfig) -> CostWeights:
    return CostWeights.from_config(cfg.fleet, cfg.controller)


def build_controller(cfg: RunConfig, mode: str, record: TrajectoryRecord | None):
    c = cfg.controller
    if mode == "hdv":
        return None
    if mode == "mpc":
        return MpcController(linear_model(cfg.fleet, cfg.ovm, cfg.v_star, cfg.dt), c,
                             fleet=cfg.fleet)
    if record is None:
        raise ValueError(f"mode {mode!r} needs a dataset")
    if mode == "deeplcc":
        blocks = partition(c.matrix_kind, record.u, record.eps, record.y, c.T_ini, c.N)
        return deeplcc_controller(blocks, cfg.fleet, c)
    if mode == "masked":
        masks = cfg.mask_set()
        return masked_controller(masked_blocks_from_record(record, masks, c), masks, c,
                                 mode=cfg.masks.constraint_mode)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass
class RunOutcome:
    mode: str
    log: RunLog
    metrics: MetricsReport
    controller: object = None


def run(cfg: RunConfig, mode: str, record: TrajectoryRecord | None = None) -> RunOutcome:
    """Closed loop on the configured scenario; the plant noise stream depends only on the seed."""
    ctl = build_controller(cfg, mode, record)
    tag = "all-hdv" if mode == "hdv" else mode
    log = simulate(cfg.scenario, cfg.fleet, cfg.ovm, ctl, cfg.noise, cfg.dt,
                   rng=cfg.seeds()["noise"], tag=tag, reference_window=cfg.reference_window)
    W = weights(cfg)
    return RunOutcome(mode, log, metrics(log, W.Q, W.R), ctl)


def objective_gap(plain: RunLog, masked: RunLog, pipeline: MaskedPipeline) -> float:
    """Largest |J - (J_bar + rho)| over the solved steps of two matched runs."""
    a = np.array([d.objective for d in plain.diagnostics])
    b = np.array([d.objective for d in masked.diagnostics])
    ok = ~np.isnan(a) & ~np.isnan(b)
    return float(np.abs(a[ok] - (b[ok] + pipeline.rho)).max(initial=0.0))


def column_sweep(cfg: RunConfig, kinds=(MatrixKind.HANKEL, MatrixKind.PAGE), columns=None,
                 seeds: int | None = None) -> dict:
    """Closed-loop quadratic cost per (kind, seed index, column count).

    Each seed draws one record long enough for the largest column count;
    smaller counts use its leading samples.  The plant noise of the
    evaluation run is the same for every entry.
    """
    columns = tuple(columns or cfg.sweep.columns)
    n_seeds = seeds or cfg.sweep.seeds
    W = weights(cfg)
    c0 = cfg.controller
    out = {}
    for kind in kinds:
        kind = MatrixKind(kind)
        c = replace(c0, matrix_kind=kind)
        T_max = samples_for_columns(kind, max(columns), c.T_ini, c.N)
        for s, ss in enumerate(np.random.SeedSequence(cfg.seed).spawn(n_seeds)):
            rec = collect(cfg, T_max, np.random.default_rng(ss), check=False).record
            for cols in columns:
                r = rec.head(samples_for_columns(kind, cols, c.T_ini, c.N))
                blocks = partition(kind, r.u, r.eps, r.y, c.T_ini, c.N)
                log = simulate(cfg.scenario, cfg.fleet, cfg.ovm,
                               deeplcc_controller(blocks, cfg.fleet, c), cfg.noise, cfg.dt,
                               rng=cfg.seeds()["noise"], reference_window=cfg.reference_window)
                out[kind.value, s, cols] = quadratic_cost(log, W.Q, W.R)
    return out


def sweep_table(results: dict) -> list[dict]:
    """Mean, sample variance and spread per (kind, columns)."""
    keys = sorted({(k, c) for k, _, c in results})
    rows = []
    for kind, cols in keys:
        vals = np.array([v for (k, _, c), v in sorted(results.items()) if k == kind and c == cols])
        rows.append({"kind": kind, "columns": cols, "mean": float(vals.mean()),
                     "variance": float(vals.var(ddof=1)) if vals.size > 1 else 0.0,
                     "min": float(vals.min()), "max": float(vals.max())})
    return rows


def zero_noise(cfg: RunConfig) -> RunConfig:
    return replace(cfg, noise=NoiseSpec(0.0))
