"""Receding-horizon DeeP-LCC and the model-based MPC baseline.

Data convention: sample k of a record pairs the input ``u(k)`` and head
velocity error ``eps(k)`` applied at step k with the output ``y`` measured
after that step.  At time t the controller therefore completes the pending
triple ``(u(t-1), eps(t-1), y(t))``, solves, and applies ``u(t)``.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .datamat import BlockMatrixSet, MatrixKind
from .errors import ControllerFault, DimensionMismatch, NotWarmedUp
from .model import FleetTopology, LinearDiscreteModel, lifted_response
from .qp import INF, QpSettings, QpSolver, QpStatus, QuadraticProgram


@dataclass(frozen=True)
class ControllerConfig:
    T_ini: int = 15
    N: int = 30
    w_s: float = 0.5
    w_v: float = 1.0
    w_u: float = 0.1
    s_err_bounds: tuple[float, float] = (-15.0, 20.0)
    v_err_bounds: tuple[float, float] = (-30.0, 30.0)
    a_bounds: tuple[float, float] = (-5.0, 2.0)
    lambda_g: float = 100.0
    lambda_sigma: float = 1e4
    matrix_kind: MatrixKind = MatrixKind.HANKEL
    regularized: bool = True
    ones_row: bool = True
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "matrix_kind", MatrixKind(self.matrix_kind))
        for name in ("s_err_bounds", "v_err_bounds", "a_bounds"):
            object.__setattr__(self, name, tuple(float(b) for b in getattr(self, name)))
        if self.T_ini < 1 or self.N < 1:
            raise ValueError("horizons must be >= 1")
        if min(self.w_s, self.w_v, self.w_u) <= 0:
            raise ValueError("cost weights must be positive")
        for name in ("s_err_bounds", "v_err_bounds", "a_bounds"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered")
        if self.regularized and (self.lambda_g <= 0 or self.lambda_sigma <= 0):
            raise ValueError("regularized problems need lambda_g > 0 and lambda_sigma > 0")


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray

    @classmethod
    def from_config(cls, fleet: FleetTopology, cfg: ControllerConfig) -> "CostWeights":
        q = [cfg.w_s, cfg.w_v] * fleet.m + [cfg.w_v] * (fleet.n - fleet.m)
        return cls(Q=np.diag(q), R=cfg.w_u * np.eye(fleet.m))


def output_bounds(fleet: FleetTopology, cfg: ControllerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample box on y: spacing bounds on CAV rows, velocity bounds elsewhere."""
    lo = [cfg.s_err_bounds[0], cfg.v_err_bounds[0]] * fleet.m + \
         [cfg.v_err_bounds[0]] * (fleet.n - fleet.m)
    hi = [cfg.s_err_bounds[1], cfg.v_err_bounds[1]] * fleet.m + \
         [cfg.v_err_bounds[1]] * (fleet.n - fleet.m)
    return np.array(lo), np.array(hi)


@dataclass(frozen=True)
class SampleConstraints:
    """Per-sample rows ``lo <= M z <= hi`` applied to every future y (or u)."""

    M: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def box(cls, lo, hi) -> "SampleConstraints":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        return cls(np.eye(lo.size), lo, hi)


@dataclass(frozen=True)
class CostTerms:
    """Per-sample cost ``y'Qy + q'y + u'Ru + r'u`` summed over the horizon."""

    Q: np.ndarray
    R: np.ndarray
    q: np.ndarray | None = None
    r: np.ndarray | None = None
    constant: float = 0.0


class PastBuffer:
    """FIFO of the last T_ini (u, eps, y) triples, oldest first."""

    def __init__(self, T_ini: int, m: int, p: int):
        self.T_ini, self.m, self.p = T_ini, m, p
        self._u: deque = deque(maxlen=T_ini)
        self._e: deque = deque(maxlen=T_ini)
        self._y: deque = deque(maxlen=T_ini)

    def push(self, u, eps, y) -> None:
        u = np.asarray(u, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if u.size != self.m or y.size != self.p:
            raise DimensionMismatch(f"expected u of size {self.m} and y of size {self.p}")
        self._u.append(u.copy())
        self._e.append(float(eps))
        self._y.append(y.copy())

    @property
    def warmed(self) -> bool:
        return len(self._u) == self.T_ini

    def shift(self, dy, deps: float) -> None:
        """Translate stored outputs and disturbances (used when the reference moves)."""
        dy = np.asarray(dy, dtype=float).reshape(self.p)
        for k in range(len(self._y)):
            self._y[k] = self._y[k] + dy
            self._e[k] = self._e[k] + deps

    def _check(self):
        if not self.warmed:
            raise NotWarmedUp(f"buffer holds {len(self._u)} of {self.T_ini} samples")

    @property
    def u_ini(self) -> np.ndarray:
        self._check()
        return np.concatenate(self._u) if self.m else np.zeros(0)

    @property
    def eps_ini(self) -> np.ndarray:
        self._check()
        return np.array(self._e)

    @property
    def y_ini(self) -> np.ndarray:
        self._check()
        return np.concatenate(self._y)

    @classmethod
    def from_arrays(cls, u_ini, eps_ini, y_ini) -> "PastBuffer":
        u = np.atleast_2d(np.asarray(u_ini, dtype=float))
        y = np.atleast_2d(np.asarray(y_ini, dtype=float))
        e = np.asarray(eps_ini, dtype=float).reshape(-1)
        buf = cls(len(e), u.shape[1], y.shape[1])
        for uk, ek, yk in zip(u, e, y):
            buf.push(uk, ek, yk)
        return buf


def _row_space(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    _, sv, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(sv > rtol * sv[0])) if sv.size and sv[0] > 0 else 0
    return Vt[:r].T


class DeepLccProblem:
    """DeeP-LCC QP with every buffer-independent piece assembled once.

    Decision vector: ``g`` (or its row-space coordinates when unregularized),
    followed by the slack on the past outputs when regularized.  Only
    ``b_eq`` depends on the past buffer, so consecutive solves reuse the
    solver workspace.
    """

    def __init__(self, blocks: BlockMatrixSet, cost: CostTerms, cfg: ControllerConfig,
                 y_rows: SampleConstraints, u_rows: SampleConstraints, ones_row: bool):
        if blocks.t_ini != cfg.T_ini or blocks.horizon != cfg.N:
            raise DimensionMismatch("data horizons differ from the controller config")
        m, p, N, T_ini = blocks.m, blocks.p, cfg.N, cfg.T_ini
        if cost.Q.shape != (p, p) or cost.R.shape != (m, m):
            raise DimensionMismatch("cost weights do not match the data dimensions")
        self.blocks, self.cost, self.cfg = blocks, cost, cfg
        self.m, self.p, self.ones_row = m, p, ones_row
        self.regularized = cfg.regularized
        cols = blocks.cols
        if self.regularized:
            V = None
            lam_g = cfg.lambda_g
            Up, Ep, Yp, Uf, Ef, Yf = (blocks.U_p, blocks.E_p, blocks.Y_p,
                                      blocks.U_f, blocks.E_f, blocks.Y_f)
        else:
            # without a norm penalty g is only identifiable on the data row space
            stack = blocks.stacked()
            if ones_row:
                stack = np.vstack([stack, np.ones((1, cols))])
            V = _row_space(stack)
            lam_g = 0.0
            Up, Ep, Yp, Uf, Ef, Yf = (X @ V for X in (blocks.U_p, blocks.E_p, blocks.Y_p,
                                                       blocks.U_f, blocks.E_f, blocks.Y_f))
        self.V = V
        ng = Up.shape[1]
        ns = p * T_ini if self.regularized else 0
        self.n_g, self.n_sigma = ng, ns
        d = ng + ns
        Qb = np.kron(np.eye(N), cost.Q)
        Rb = np.kron(np.eye(N), cost.R)
        P = np.zeros((d, d))
        P[:ng, :ng] = 2 * (Yf.T @ Qb @ Yf + Uf.T @ Rb @ Uf)
        if lam_g:
            P[:ng, :ng] += 2 * lam_g * np.eye(ng)
        if ns:
            P[ng:, ng:] = 2 * cfg.lambda_sigma * np.eye(ns)
        P = 0.5 * (P + P.T)
        q = np.zeros(d)
        if cost.q is not None:
            q[:ng] += Yf.T @ np.tile(cost.q, N)
        if cost.r is not None:
            q[:ng] += Uf.T @ np.tile(cost.r, N)
        sig = np.zeros((p * T_ini, ns))
        if ns:
            sig = -np.eye(ns)
        eq_rows = [np.hstack([Up, np.zeros((Up.shape[0], ns))]),
                   np.hstack([Ep, np.zeros((T_ini, ns))]),
                   np.hstack([Yp, sig]),
                   np.hstack([Ef, np.zeros((N, ns))])]
        if ones_row:
            one = np.ones((1, cols)) @ V if V is not None else np.ones((1, cols))
            eq_rows.append(np.hstack([one, np.zeros((1, ns))]))
        A_eq = np.vstack(eq_rows)
        My = np.kron(np.eye(N), y_rows.M) @ Yf
        Mu = np.kron(np.eye(N), u_rows.M) @ Uf
        A_in = np.hstack([np.vstack([My, Mu]), np.zeros((My.shape[0] + Mu.shape[0], ns))])
        lo = np.concatenate([np.tile(y_rows.lo, N), np.tile(u_rows.lo, N)])
        hi = np.concatenate([np.tile(y_rows.hi, N), np.tile(u_rows.hi, N)])
        lo = np.where(np.isfinite(lo), lo, -INF)
        hi = np.where(np.isfinite(hi), hi, INF)
        self._tail = np.concatenate([np.zeros(N), [1.0] if ones_row else []])
        self._Uf, self._Yf = Uf, Yf
        self.base = QuadraticProgram(P, q, A_eq, np.zeros(A_eq.shape[0]), A_in, lo, hi)

    @property
    def dim(self) -> int:
        return self.n_g + self.n_sigma

    def b_eq(self, buf: PastBuffer) -> np.ndarray:
        if buf.T_ini != self.cfg.T_ini or buf.m != self.m or buf.p != self.p:
            raise DimensionMismatch("buffer dimensions differ from the problem")
        return np.concatenate([buf.u_ini, buf.eps_ini, buf.y_ini, self._tail])

    def qp_for(self, buf: PastBuffer) -> QuadraticProgram:
        return self.base.with_data(b_eq=self.b_eq(buf))

    def g_of(self, x: np.ndarray) -> np.ndarray:
        z = x[: self.n_g]
        return self.V @ z if self.V is not None else z

    def sigma_of(self, x: np.ndarray) -> np.ndarray:
        return x[self.n_g:]

    def future_inputs(self, x: np.ndarray) -> np.ndarray:
        """``(N, m)`` predicted input sequence."""
        return (self._Uf @ x[: self.n_g]).reshape(self.cfg.N, self.m)

    def future_outputs(self, x: np.ndarray) -> np.ndarray:
        return (self._Yf @ x[: self.n_g]).reshape(self.cfg.N, self.p)


def assemble_deeplcc(blocks: BlockMatrixSet, buf: PastBuffer, weights: CostWeights,
                     cfg: ControllerConfig, ones_row: bool | None = None, *,
                     fleet: FleetTopology | None = None) -> QuadraticProgram:
    """One-off assembly of the plain DeeP-LCC QP for the given buffer."""
    return plain_problem(blocks, weights, cfg, ones_row, fleet=fleet).qp_for(buf)


def plain_problem(blocks: BlockMatrixSet, weights: CostWeights, cfg: ControllerConfig,
                  ones_row: bool | None = None, *, fleet: FleetTopology | None = None
                  ) -> DeepLccProblem:
    fleet = fleet or _fleet_from_weights(blocks, weights)
    lo, hi = output_bounds(fleet, cfg)
    u_rows = SampleConstraints.box(np.full(fleet.m, cfg.a_bounds[0]),
                                   np.full(fleet.m, cfg.a_bounds[1]))
    return DeepLccProblem(blocks, CostTerms(weights.Q, weights.R), cfg,
                          SampleConstraints.box(lo, hi), u_rows,
                          cfg.ones_row if ones_row is None else ones_row)


def _fleet_from_weights(blocks: BlockMatrixSet, weights: CostWeights) -> FleetTopology:
    # CAVs come first in the output ordering; assume the canonical prefix when no
    # topology is given (only the bound layout depends on it)
    m, p = blocks.m, blocks.p
    return FleetTopology(n=p - m, cav_indices=tuple(range(1, m + 1)))


@dataclass(frozen=True)
class Observation:
    """Measurement at time t; ``x`` (full error state) is only used by MPC."""

    y: np.ndarray
    eps: float
    x: np.ndarray | None = None


@dataclass
class StepDiagnostics:
    status: str
    objective: float
    kkt_residual: float
    iterations: int
    solve_time: float
    decision_dim: int
    warmup: bool = False
    flagged: bool = False


@dataclass
class StepResult:
    u: np.ndarray
    diagnostics: StepDiagnostics
    predicted_u: np.ndarray | None = field(default=None, repr=False)
    predicted_y: np.ndarray | None = field(default=None, repr=False)


class DeepLccController:
    """Receding-horizon loop around a :class:`DeepLccProblem`.

    ``warmup_input`` is applied (and recorded in the buffer) until T_ini
    samples exist.  ``objective_offset`` is added to reported objectives.
    """

    def __init__(self, problem: DeepLccProblem, *, settings: QpSettings | None = None,
                 warmup_input=None, objective_offset: float = 0.0):
        self.problem = problem
        self.cfg = problem.cfg
        self.solver = QpSolver(settings)
        self.buffer = PastBuffer(self.cfg.T_ini, problem.m, problem.p)
        self.warmup_input = (np.zeros(problem.m) if warmup_input is None
                             else np.asarray(warmup_input, dtype=float).reshape(problem.m))
        self.objective_offset = objective_offset
        self._pending: tuple[np.ndarray, float] | None = None
        self.t = 0

    def reset(self) -> None:
        self.buffer = PastBuffer(self.cfg.T_ini, self.problem.m, self.problem.p)
        self._pending = None
        self.t = 0

    def rebase(self, dy, deps: float) -> None:
        """Re-express past outputs and disturbances after a reference change."""
        self.buffer.shift(dy, deps)
        if self._pending is not None:
            self._pending = (self._pending[0], self._pending[1] + deps)

    def step(self, obs: Observation) -> StepResult:
        if self._pending is not None:
            self.buffer.push(self._pending[0], self._pending[1], obs.y)
        if not self.buffer.warmed:
            u = self.warmup_input.copy()
            diag = StepDiagnostics("warmup", float("nan"), 0.0, 0, 0.0, self.problem.dim,
                                   warmup=True)
            res = StepResult(u, diag)
        else:
            res = self._solve()
        self._pending = (res.u, float(obs.eps))
        self.t += 1
        return res

    def _solve(self) -> StepResult:
        qp = self.problem.qp_for(self.buffer)
        t0 = time.perf_counter()
        sol = self.solver.solve(qp)
        elapsed = time.perf_counter() - t0
        flagged = sol.status is not QpStatus.OPTIMAL
        if flagged and self.cfg.strict:
            raise ControllerFault(f"solver returned {sol.status.value}", self.t)
        u_seq = self.problem.future_inputs(sol.x)
        diag = StepDiagnostics(sol.status.value, sol.objective + self.objective_offset,
                               sol.kkt_residual, sol.iterations, elapsed, self.problem.dim,
                               flagged=flagged)
        return StepResult(u_seq[0].copy(), diag, u_seq, self.problem.future_outputs(sol.x))


def deeplcc_controller(blocks: BlockMatrixSet, fleet: FleetTopology, cfg: ControllerConfig,
                       weights: CostWeights | None = None, *,
                       settings: QpSettings | None = None) -> DeepLccController:
    weights = weights or CostWeights.from_config(fleet, cfg)
    return DeepLccController(plain_problem(blocks, weights, cfg, fleet=fleet), settings=settings)


class MpcProblem:
    """Output-feedback MPC over the same horizon, cost and constraints.

    Predicts the outputs after each of the next N steps from the current
    error state with zero future head disturbance.
    """

    def __init__(self, model: LinearDiscreteModel, weights: CostWeights, cfg: ControllerConfig,
                 fleet: FleetTopology | None = None):
        fleet = fleet or model.fleet
        if fleet is None:
            raise DimensionMismatch("MPC needs the fleet topology")
        m, N = model.B_d.shape[1], cfg.N
        p = model.C_d.shape[0]
        if weights.Q.shape != (p, p) or weights.R.shape != (m, m):
            raise DimensionMismatch("cost weights do not match the model")
        lift = lifted_response(model, 1, N)
        self.Phi = lift.T_x[p:]
        self.Gamma = lift.T_u[p:, : m * N]
        self.m, self.p, self.N, self.nx = m, p, N, model.A_d.shape[0]
        Qb = np.kron(np.eye(N), weights.Q)
        Rb = np.kron(np.eye(N), weights.R)
        self._GQ = self.Gamma.T @ Qb
        P = 2 * (self._GQ @ self.Gamma + Rb)
        self._Qb = Qb
        ylo, yhi = output_bounds(fleet, cfg)
        self._ylo, self._yhi = np.tile(ylo, N), np.tile(yhi, N)
        A_in = np.vstack([self.Gamma, np.eye(m * N)])
        lo = np.concatenate([self._ylo, np.full(m * N, cfg.a_bounds[0])])
        hi = np.concatenate([self._yhi, np.full(m * N, cfg.a_bounds[1])])
        self.base = QuadraticProgram(0.5 * (P + P.T), np.zeros(m * N), A_in=A_in, lo=lo, hi=hi)
        self.cfg = cfg

    @property
    def dim(self) -> int:
        return self.m * self.N

    def qp_for(self, x: np.ndarray) -> QuadraticProgram:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.nx:
            raise DimensionMismatch(f"state estimate must have {self.nx} entries")
        free = self.Phi @ x
        q = 2 * self._GQ @ free
        lo, hi = self.base.lo.copy(), self.base.hi.copy()
        ny = self._ylo.size
        lo[:ny] -= free
        hi[:ny] -= free
        return self.base.with_data(q=q, lo=lo, hi=hi)

    def constant(self, x: np.ndarray) -> float:
        free = self.Phi @ x
        return float(free @ self._Qb @ free)


def assemble_mpc(model: LinearDiscreteModel, x_est, weights: CostWeights,
                 cfg: ControllerConfig, fleet: FleetTopology | None = None) -> QuadraticProgram:
    return MpcProblem(model, weights, cfg, fleet).qp_for(x_est)


class MpcController:
    def __init__(self, model: LinearDiscreteModel, cfg: ControllerConfig,
                 weights: CostWeights | None = None, *, fleet: FleetTopology | None = None,
                 settings: QpSettings | None = None):
        fleet = fleet or model.fleet
        weights = weights or CostWeights.from_config(fleet, cfg)
        self.problem = MpcProblem(model, weights, cfg, fleet)
        self.cfg = cfg
        self.solver = QpSolver(settings)
        self.warmup_steps = cfg.T_ini
        self.t = 0

    def reset(self) -> None:
        self.t = 0

    def rebase(self, dy, deps: float) -> None:
        pass

    def step(self, obs: Observation) -> StepResult:
        """Applies zero input for the first T_ini steps, like the data-driven loop."""
        pr = self.problem
        if self.t < self.warmup_steps:
            self.t += 1
            return StepResult(np.zeros(pr.m), StepDiagnostics(
                "warmup", float("nan"), 0.0, 0, 0.0, pr.dim, warmup=True))
        if obs.x is None:
            raise DimensionMismatch("MPC needs the full error state in the observation")
        qp = pr.qp_for(obs.x)
        t0 = time.perf_counter()
        sol = self.solver.solve(qp)
        elapsed = time.perf_counter() - t0
        flagged = sol.status is not QpStatus.OPTIMAL
        if flagged and self.cfg.strict:
            raise ControllerFault(f"solver returned {sol.status.value}", self.t)
        u_seq = sol.x.reshape(pr.N, pr.m)
        y_seq = (pr.Phi @ obs.x + pr.Gamma @ sol.x).reshape(pr.N, pr.p)
        diag = StepDiagnostics(sol.status.value, sol.objective + pr.constant(obs.x),
                               sol.kkt_residual, sol.iterations, elapsed, pr.dim, flagged=flagged)
        self.t += 1
        return StepResult(u_seq[0].copy(), diag, u_seq, y_seq)

