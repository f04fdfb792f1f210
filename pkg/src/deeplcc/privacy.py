"""Affine masking of CAV states and inputs, the masked DeeP-LCC problem, and privacy checks.

Each CAV i applies ``x_bar = P_x x + l_x`` to its (spacing, velocity) error
and ``u_bar = p_u u + l_u`` to its input before anything leaves the vehicle.
The central unit only ever sees masked data and returns a masked input,
which the vehicle decodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import block_diag

from .controller import (ControllerConfig, CostTerms, CostWeights, DeepLccController,
                         DeepLccProblem, Observation, PastBuffer, SampleConstraints, StepResult,
                         output_bounds)
from .datamat import BlockMatrixSet, partition
from .errors import DimensionMismatch, InvalidLiteralBounds, SingularMap
from .model import FleetTopology
from .qp import QpSettings, QuadraticProgram
from .sim import TrajectoryRecord

MAP_TOL = 1e-9
WITNESS_SEPARATION = 1e-3


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class AffineMap2:
    P: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float).reshape(2, 2)
        l = np.asarray(self.l, dtype=float).reshape(2)
        if abs(np.linalg.det(P)) < MAP_TOL:
            raise SingularMap(f"state map has |det| = {abs(np.linalg.det(P)):.3e}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "l", l)

    def apply(self, x):
        return np.asarray(x, dtype=float) @ self.P.T + self.l

    def invert(self, xb):
        return np.linalg.solve(self.P, (np.asarray(xb, dtype=float) - self.l).T).T

    @classmethod
    def identity(cls) -> "AffineMap2":
        return cls(np.eye(2), np.zeros(2))


@dataclass(frozen=True)
class AffineMap1:
    p: float
    l: float

    def __post_init__(self):
        if abs(self.p) < MAP_TOL:
            raise SingularMap(f"input map scale {self.p} is too close to zero")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "l", float(self.l))

    def apply(self, u):
        return self.p * np.asarray(u, dtype=float) + self.l

    def invert(self, ub):
        return (np.asarray(ub, dtype=float) - self.l) / self.p

    @classmethod
    def identity(cls) -> "AffineMap1":
        return cls(1.0, 0.0)


@dataclass(frozen=True)
class FleetMasks:
    fleet: FleetTopology
    state_maps: tuple
    input_maps: tuple
    P_u: np.ndarray
    L_u: np.ndarray
    P_y: np.ndarray
    L_y: np.ndarray

    @property
    def P_y_inv(self) -> np.ndarray:
        return np.linalg.inv(self.P_y)

    def mask_output(self, y):
        return np.asarray(y, dtype=float) @ self.P_y.T + self.L_y

    def unmask_output(self, yb):
        return np.linalg.solve(self.P_y, (np.asarray(yb, dtype=float) - self.L_y).T).T

    def mask_input(self, u):
        return np.asarray(u, dtype=float) * np.diag(self.P_u) + self.L_u

    def unmask_input(self, ub):
        return (np.asarray(ub, dtype=float) - self.L_u) / np.diag(self.P_u)

    def cav_states(self, y) -> np.ndarray:
        """``(..., m, 2)`` view of the CAV (spacing, velocity) rows of outputs."""
        y = np.asarray(y, dtype=float)
        return y[..., : 2 * self.fleet.m].reshape(*y.shape[:-1], self.fleet.m, 2)


def lift_maps(state_maps, input_maps, fleet: FleetTopology) -> FleetMasks:
    state_maps = tuple(m if isinstance(m, AffineMap2) else AffineMap2(*m) for m in state_maps)
    input_maps = tuple(m if isinstance(m, AffineMap1) else AffineMap1(*m) for m in input_maps)
    if len(state_maps) != fleet.m or len(input_maps) != fleet.m:
        raise DimensionMismatch(f"need exactly {fleet.m} state and input maps")
    P_y = block_diag(*[s.P for s in state_maps], np.eye(fleet.n - fleet.m))
    L_y = np.concatenate([s.l for s in state_maps] + [np.zeros(fleet.n - fleet.m)])
    P_u = np.diag([i.p for i in input_maps])
    L_u = np.array([i.l for i in input_maps])
    return FleetMasks(fleet, state_maps, input_maps, P_u, L_u, P_y, L_y)


def identity_masks(fleet: FleetTopology) -> FleetMasks:
    return lift_maps([AffineMap2.identity()] * fleet.m, [AffineMap1.identity()] * fleet.m, fleet)


def reference_masks(fleet: FleetTopology) -> FleetMasks:
    """The two-CAV demonstration mask set (rotations with offsets (5, 3))."""
    if fleet.m != 2:
        raise DimensionMismatch("the demonstration mask set is defined for two CAVs")
    return lift_maps(
        [AffineMap2(rotation(np.pi / 4), [5.0, 3.0]), AffineMap2(rotation(8 * np.pi / 9), [5.0, 3.0])],
        [AffineMap1(-1.5, 1.0), AffineMap1(1.5, -1.0)], fleet)


@dataclass(frozen=True)
class MaskedProblemParams:
    Q_bar: np.ndarray
    q_bar: np.ndarray
    R_bar: np.ndarray
    r_bar: np.ndarray
    rho: float
    horizon: int

    def cost_terms(self) -> CostTerms:
        return CostTerms(self.Q_bar, self.R_bar, self.q_bar, self.r_bar, self.rho)


def transform_cost(weights: CostWeights, masks: FleetMasks, N: int) -> MaskedProblemParams:
    Pyi = masks.P_y_inv
    Pui = np.linalg.inv(masks.P_u)
    Qb = Pyi.T @ weights.Q @ Pyi
    Rb = Pui.T @ weights.R @ Pui
    Qb, Rb = 0.5 * (Qb + Qb.T), 0.5 * (Rb + Rb.T)
    q = -2 * Qb @ masks.L_y
    r = -2 * Rb @ masks.L_u
    rho = N * float(masks.L_y @ Qb @ masks.L_y + masks.L_u @ Rb @ masks.L_u)
    return MaskedProblemParams(Qb, q, Rb, r, rho, N)


class ConstraintMode(str, Enum):
    EXACT_PREIMAGE = "exact_preimage"
    MASKED_BOUNDS = "masked_bounds"


def transform_constraints(cfg: ControllerConfig, masks: FleetMasks,
                          mode: ConstraintMode | str = ConstraintMode.EXACT_PREIMAGE
                          ) -> tuple[SampleConstraints, SampleConstraints]:
    """Per-sample constraint rows on ``(y_bar, u_bar)``."""
    mode = ConstraintMode(mode)
    fleet = masks.fleet
    ylo, yhi = output_bounds(fleet, cfg)
    ulo = np.full(fleet.m, cfg.a_bounds[0])
    uhi = np.full(fleet.m, cfg.a_bounds[1])
    if mode is ConstraintMode.EXACT_PREIMAGE:
        Pyi = masks.P_y_inv
        Pui = np.linalg.inv(masks.P_u)
        sy, su = Pyi @ masks.L_y, Pui @ masks.L_u
        return (SampleConstraints(Pyi, ylo + sy, yhi + sy),
                SampleConstraints(Pui, ulo + su, uhi + su))
    blo, bhi = masks.P_y @ ylo + masks.L_y, masks.P_y @ yhi + masks.L_y
    clo, chi = masks.P_u @ ulo + masks.L_u, masks.P_u @ uhi + masks.L_u
    bad = np.concatenate([np.flatnonzero(blo > bhi), fleet.p + np.flatnonzero(clo > chi)])
    if bad.size:
        raise InvalidLiteralBounds(
            f"mapped bounds are inverted on rows {bad.tolist()}; use the exact_preimage mode")
    return SampleConstraints.box(blo, bhi), SampleConstraints.box(clo, chi)


def mask_dataset(rec: TrajectoryRecord, masks: FleetMasks) -> TrajectoryRecord:
    return TrajectoryRecord(masks.mask_input(rec.u), rec.eps.copy(), masks.mask_output(rec.y),
                            rec.dt, masked=True)


def unmask_dataset(rec: TrajectoryRecord, masks: FleetMasks) -> TrajectoryRecord:
    return TrajectoryRecord(masks.unmask_input(rec.u), rec.eps.copy(), masks.unmask_output(rec.y),
                            rec.dt, masked=False)


def masked_problem(blocks: BlockMatrixSet, masks: FleetMasks, cfg: ControllerConfig,
                   weights: CostWeights | None = None,
                   mode: ConstraintMode | str = ConstraintMode.EXACT_PREIMAGE) -> DeepLccProblem:
    """Central-unit problem on masked data; the ``1'g = 1`` row is always present."""
    weights = weights or CostWeights.from_config(masks.fleet, cfg)
    params = transform_cost(weights, masks, cfg.N)
    y_rows, u_rows = transform_constraints(cfg, masks, mode)
    return DeepLccProblem(blocks, params.cost_terms(), cfg, y_rows, u_rows, ones_row=True)


def assemble_masked_deeplcc(blocks: BlockMatrixSet, buf: PastBuffer, masks: FleetMasks,
                            cfg: ControllerConfig, weights: CostWeights | None = None,
                            mode: ConstraintMode | str = ConstraintMode.EXACT_PREIMAGE
                            ) -> QuadraticProgram:
    return masked_problem(blocks, masks, cfg, weights, mode).qp_for(buf)


class MaskedPipeline:
    """Vehicle-side masking around a central controller that sees masked data only.

    ``exchanged_y`` / ``exchanged_u`` keep what crossed the channel.
    """

    def __init__(self, central: DeepLccController, masks: FleetMasks, rho: float = 0.0):
        self.central = central
        self.masks = masks
        self.rho = rho
        self.exchanged_y: list[np.ndarray] = []
        self.exchanged_u: list[np.ndarray] = []

    def reset(self) -> None:
        self.central.reset()
        self.exchanged_y.clear()
        self.exchanged_u.clear()

    def rebase(self, dy, deps: float) -> None:
        self.central.rebase(self.masks.P_y @ np.asarray(dy, dtype=float), deps)

    def step(self, obs: Observation) -> StepResult:
        yb = self.masks.mask_output(obs.y)
        res = self.central.step(Observation(y=yb, eps=obs.eps))
        self.exchanged_y.append(yb)
        self.exchanged_u.append(np.asarray(res.u, dtype=float).copy())
        u = self.masks.unmask_input(res.u)
        return StepResult(u, res.diagnostics, res.predicted_u, res.predicted_y)


def masked_controller(masked_blocks: BlockMatrixSet, masks: FleetMasks, cfg: ControllerConfig,
                      weights: CostWeights | None = None,
                      mode: ConstraintMode | str = ConstraintMode.EXACT_PREIMAGE, *,
                      settings: QpSettings | None = None) -> MaskedPipeline:
    weights = weights or CostWeights.from_config(masks.fleet, cfg)
    problem = masked_problem(masked_blocks, masks, cfg, weights, mode)
    # during warm-up the vehicles apply zero, which reaches the centre as mask(0)
    central = DeepLccController(problem, settings=settings,
                                warmup_input=masks.mask_input(np.zeros(masks.fleet.m)))
    return MaskedPipeline(central, masks, transform_cost(weights, masks, cfg.N).rho)


def masked_blocks_from_record(rec: TrajectoryRecord, masks: FleetMasks,
                              cfg: ControllerConfig) -> BlockMatrixSet:
    mrec = rec if rec.masked else mask_dataset(rec, masks)
    return partition(cfg.matrix_kind, mrec.u, mrec.eps, mrec.y, cfg.T_ini, cfg.N)


@dataclass(frozen=True)
class Witness:
    state_maps: tuple
    input_maps: tuple
    decoded_x: np.ndarray     # (T, m, 2)
    decoded_u: np.ndarray     # (T, m)
    remask_residual: float


def _as_multi(masked_x, masked_u):
    x = np.asarray(masked_x, dtype=float)
    u = np.asarray(masked_u, dtype=float)
    if x.ndim == 2:
        x = x[:, None, :]
    if u.ndim == 1:
        u = u[:, None]
    if x.ndim != 3 or x.shape[2] != 2 or u.shape != x.shape[:2]:
        raise DimensionMismatch("masked states must be (T, [m,] 2) and inputs (T, [m])")
    return x, u


def _decode(x, u, smaps, imaps):
    dx = np.stack([smaps[i].invert(x[:, i]) for i in range(len(smaps))], axis=1)
    du = np.stack([imaps[i].invert(u[:, i]) for i in range(len(imaps))], axis=1)
    rx = np.stack([smaps[i].apply(dx[:, i]) for i in range(len(smaps))], axis=1)
    ru = np.stack([imaps[i].apply(du[:, i]) for i in range(len(imaps))], axis=1)
    res = max(float(np.abs(rx - x).max(initial=0.0)), float(np.abs(ru - u).max(initial=0.0)))
    return dx, du, res


def _sample_maps(rng: np.random.Generator, m: int):
    smaps, imaps = [], []
    for _ in range(m):
        smaps.append(AffineMap2(rotation(rng.uniform(0.0, 2 * np.pi)), rng.uniform(-10, 10, 2)))
        scale = rng.uniform(0.5, 3.0) * rng.choice([-1.0, 1.0])
        imaps.append(AffineMap1(scale, rng.uniform(-2, 2)))
    return tuple(smaps), tuple(imaps)


def diversity_witnesses(masked_x, masked_u, K: int, seed=None, *,
                        include_identity: bool = False,
                        separation: float = WITNESS_SEPARATION) -> list[Witness]:
    """K distinct (map, decoded trajectory) pairs that all reproduce the observed masked data."""
    if K < 1:
        raise ValueError("K must be >= 1")
    x, u = _as_multi(masked_x, masked_u)
    if x.shape[0] == 0:
        raise ValueError("masked sequences must be nonempty")
    m = x.shape[1]
    rng = np.random.default_rng(seed)
    out: list[Witness] = []
    flat: list[np.ndarray] = []
    if include_identity:
        smaps = tuple(AffineMap2.identity() for _ in range(m))
        imaps = tuple(AffineMap1.identity() for _ in range(m))
        dx, du, res = _decode(x, u, smaps, imaps)
        out.append(Witness(smaps, imaps, dx, du, res))
        flat.append(np.concatenate([dx.ravel(), du.ravel()]))
    while len(out) < K:
        smaps, imaps = _sample_maps(rng, m)
        dx, du, res = _decode(x, u, smaps, imaps)
        cand = np.concatenate([dx.ravel(), du.ravel()])
        if flat and min(np.abs(f - cand).max() for f in flat) < separation:
            continue
        out.append(Witness(smaps, imaps, dx, du, res))
        flat.append(cand)
    return out


def naive_attacker_estimate(masked_x, masked_u) -> tuple[np.ndarray, np.ndarray]:
    """An eavesdropper that takes the masked signals at face value."""
    return np.array(masked_x, dtype=float, copy=True), np.array(masked_u, dtype=float, copy=True)


def rmse(estimate, truth, axis=0) -> np.ndarray:
    e = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return np.sqrt(np.mean(e ** 2, axis=axis))
