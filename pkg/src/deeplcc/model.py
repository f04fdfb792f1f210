"""Mixed-traffic platoon model: OVM car following, linearization, state space.

Vehicles are indexed 1..n from front to back behind a head vehicle 0.  The
state of vehicle i is its spacing and velocity error ``(s_i - s*, v_i - v*)``;
CAVs are double integrators driven by acceleration commands.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.optimize import bisect

from ._backend import kernels
from .errors import DimensionMismatch, WellPosednessViolation


@dataclass(frozen=True)
class FleetTopology:
    """Vehicle count and the ordered CAV index set (1-based)."""

    n: int
    cav_indices: tuple[int, ...]

    def __post_init__(self):
        cav = tuple(int(i) for i in self.cav_indices)
        object.__setattr__(self, "cav_indices", cav)
        if self.n < 1:
            raise ValueError("fleet needs at least one vehicle")
        if any(b <= a for a, b in zip(cav, cav[1:])):
            raise ValueError(f"CAV indices must be strictly increasing: {cav}")
        if cav and (cav[0] < 1 or cav[-1] > self.n):
            raise ValueError(f"CAV indices must lie in 1..{self.n}: {cav}")

    @property
    def m(self) -> int:
        return len(self.cav_indices)

    @property
    def hdv_indices(self) -> tuple[int, ...]:
        cav = set(self.cav_indices)
        return tuple(i for i in range(1, self.n + 1) if i not in cav)

    @property
    def p(self) -> int:
        """Output dimension n + m."""
        return self.n + self.m

    def cav_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=np.uint8)
        for i in self.cav_indices:
            mask[i - 1] = 1
        return mask


@dataclass(frozen=True)
class OvmParams:
    alpha: float = 0.6
    beta: float = 0.9
    s_st: float = 5.0
    s_go: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if not (0 < self.s_st < self.s_go):
            raise ValueError("need 0 < s_st < s_go")
        if self.alpha <= 0 or self.beta < 0 or self.v_max <= 0:
            raise ValueError("need alpha > 0, beta >= 0, v_max > 0")

    def desired_velocity(self, s):
        s = np.asarray(s, dtype=float)
        mid = 0.5 * self.v_max * (1 - np.cos(np.pi * (s - self.s_st) / (self.s_go - self.s_st)))
        out = np.where(s <= self.s_st, 0.0, np.where(s >= self.s_go, self.v_max, mid))
        return out if out.ndim else float(out)

    def as_tuple(self):
        return (self.alpha, self.beta, self.s_st, self.s_go, self.v_max)


@dataclass(frozen=True)
class Equilibrium:
    s_star: float
    v_star: float


@dataclass(frozen=True)
class HdvLinearization:
    alpha1: float
    alpha2: float
    alpha3: float

    @property
    def wellposedness(self) -> float:
        """``alpha1 - alpha2*alpha3 + alpha3**2``; must be nonzero."""
        return self.alpha1 - self.alpha2 * self.alpha3 + self.alpha3 ** 2


@dataclass(frozen=True)
class LinearContinuousModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    C: np.ndarray
    fleet: FleetTopology | None = field(default=None, compare=False)


@dataclass(frozen=True)
class LinearDiscreteModel:
    A_d: np.ndarray
    B_d: np.ndarray
    H_d: np.ndarray
    C_d: np.ndarray
    dt: float
    fleet: FleetTopology | None = field(default=None, compare=False)

    @property
    def B_hat_d(self) -> np.ndarray:
        """Combined input matrix ``[H_d, B_d]`` acting on ``(eps, u)``."""
        return np.column_stack([self.H_d, self.B_d])


@dataclass(frozen=True)
class LiftedResponse:
    """Stacked outputs = T_u @ u + T_eps @ eps + T_x @ x0 + T_l over a horizon."""

    T_u: np.ndarray
    T_eps: np.ndarray
    T_x: np.ndarray
    T_l: np.ndarray

    def predict(self, u, eps, x0) -> np.ndarray:
        return self.T_u @ np.ravel(u) + self.T_eps @ np.ravel(eps) + self.T_x @ x0 + self.T_l


def ovm_acceleration(p: OvmParams, s, s_dot, v):
    """OVM acceleration ``alpha*(V(s) - v) + beta*s_dot`` (vectorized)."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    sd, vv = np.broadcast_arrays(s_arr, np.asarray(s_dot, dtype=np.float64),
                                 np.asarray(v, dtype=np.float64))[1:]
    # broadcast views are read-only; the kernels take writable contiguous buffers
    out = kernels.ovm_accel(np.array(s_arr), np.array(sd), np.array(vv), *p.as_tuple())
    if np.ndim(s) == 0 and np.ndim(s_dot) == 0 and np.ndim(v) == 0:
        return float(out[0])
    return out


def equilibrium(p: OvmParams, v_star: float, tol: float = 1e-10) -> Equilibrium:
    """Solve ``V(s*) = v*`` for the equilibrium spacing by bisection."""
    if not 0 < v_star < p.v_max:
        raise ValueError(f"v* must lie in (0, {p.v_max}), got {v_star}")
    s_star = bisect(lambda s: p.desired_velocity(s) - v_star, p.s_st, p.s_go, xtol=tol)
    return Equilibrium(s_star=float(s_star), v_star=float(v_star))


def linearize(p: OvmParams, eq: Equilibrium, tol: float = 1e-12) -> HdvLinearization:
    """Partial derivatives of the OVM at the equilibrium.

    alpha1 = dF/ds, alpha2 = dF/ds_dot - dF/dv, alpha3 = dF/ds_dot.
    """
    width = p.s_go - p.s_st
    if p.s_st < eq.s_star < p.s_go:
        dV = 0.5 * p.v_max * np.pi / width * np.sin(np.pi * (eq.s_star - p.s_st) / width)
    else:
        dV = 0.0
    lin = HdvLinearization(alpha1=float(p.alpha * dV), alpha2=p.alpha + p.beta, alpha3=p.beta)
    if abs(lin.wellposedness) <= tol:
        raise WellPosednessViolation(
            f"alpha1 - alpha2*alpha3 + alpha3^2 = {lin.wellposedness:.3e} is zero")
    return lin


def build_continuous(fleet: FleetTopology, lin: HdvLinearization) -> LinearContinuousModel:
    n = fleet.n
    cav = set(fleet.cav_indices)
    A = np.zeros((2 * n, 2 * n))
    for i in range(1, n + 1):
        r = 2 * (i - 1)
        A[r, r + 1] = -1.0
        if i not in cav:
            A[r + 1, r] = lin.alpha1
            A[r + 1, r + 1] = -lin.alpha2
        if i > 1:
            A[r, r - 1] = 1.0
            if i not in cav:
                A[r + 1, r - 1] = lin.alpha3
    B = np.zeros((2 * n, fleet.m))
    for k, i in enumerate(fleet.cav_indices):
        B[2 * i - 1, k] = 1.0
    H = np.zeros(2 * n)
    H[0] = 1.0
    H[1] = lin.alpha3
    rows = []
    for i in fleet.cav_indices:
        rows += [2 * i - 2, 2 * i - 1]
    rows += [2 * j - 1 for j in fleet.hdv_indices]
    C = np.eye(2 * n)[rows]
    return LinearContinuousModel(A=A, B=B, H=H, C=C, fleet=fleet)


def discretize(model: LinearContinuousModel, dt: float) -> LinearDiscreteModel:
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    nx = model.A.shape[0]
    Bh = np.column_stack([model.H, model.B])
    aug = np.zeros((nx + Bh.shape[1], nx + Bh.shape[1]))
    aug[:nx, :nx] = model.A
    aug[:nx, nx:] = Bh
    E = expm(aug * dt)
    A_d = E[:nx, :nx]
    H_d = E[:nx, nx].copy()
    B_d = E[:nx, nx + 1:].copy()
    return LinearDiscreteModel(A_d=A_d, B_d=B_d, H_d=H_d, C_d=model.C.copy(), dt=float(dt),
                               fleet=model.fleet)


def linear_model(fleet: FleetTopology, ovm: OvmParams, v_star: float, dt: float):
    """Shortcut: equilibrium -> linearization -> continuous -> discrete."""
    eq = equilibrium(ovm, v_star)
    lin = linearize(ovm, eq)
    return discretize(build_continuous(fleet, lin), dt)


def lifted_response(d: LinearDiscreteModel, T_ini: int, N: int, *, B_bar=None, C_bar=None,
                    L_u_bar=None, L_y=None) -> LiftedResponse:
    """Lift the (optionally masked) discrete model over ``T_ini + N`` steps.

    Dynamics: ``x+ = A_d x + B_bar u + H_d eps + L_u_bar``, ``y = C_bar x + L_y``.
    Defaults give the unmasked model.
    """
    if T_ini < 1 or N < 1:
        raise ValueError("horizons must be >= 1")
    L = T_ini + N
    A = d.A_d
    B = d.B_d if B_bar is None else np.asarray(B_bar, dtype=float)
    C = d.C_d if C_bar is None else np.asarray(C_bar, dtype=float)
    nx = A.shape[0]
    p, m = C.shape[0], B.shape[1]
    if B.shape[0] != nx or C.shape[1] != nx:
        raise DimensionMismatch("input/output maps do not match the state dimension")
    Lu = np.zeros(nx) if L_u_bar is None else np.asarray(L_u_bar, dtype=float)
    Ly = np.zeros(p) if L_y is None else np.asarray(L_y, dtype=float)

    # CA^k for k = 0..L-1
    CAk = [C]
    for _ in range(L - 1):
        CAk.append(CAk[-1] @ A)
    T_u = np.zeros((p * L, m * L))
    T_eps = np.zeros((p * L, L))
    for k in range(1, L):
        for j in range(k):
            blk = CAk[k - 1 - j]
            T_u[k * p:(k + 1) * p, j * m:(j + 1) * m] = blk @ B
            T_eps[k * p:(k + 1) * p, j] = blk @ d.H_d
    T_x = np.vstack(CAk)
    T_l = np.empty(p * L)
    acc = np.zeros(p)
    for k in range(L):
        T_l[k * p:(k + 1) * p] = Ly + acc
        acc = acc + CAk[k] @ Lu
    return LiftedResponse(T_u=T_u, T_eps=T_eps, T_x=T_x, T_l=T_l)


def export_matrix_csv(matrix, path) -> None:
    """Write a matrix row-major at full precision with a column-index header."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(range(M.shape[1]))
        for row in M:
            w.writerow([repr(float(x)) for x in row])
