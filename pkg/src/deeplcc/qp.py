"""Dense solver for strictly convex quadratic programs.

    minimize    1/2 x'Px + q'x
    subject to  A_eq x = b_eq,   lo <= A_in x <= hi

Equalities are eliminated with an orthonormal null-space basis (redundant
rows are detected and dropped); the remaining inequality-constrained problem
is solved exactly by the Goldfarb-Idnani dual active-set method, carried out
entirely on the constraint Gram matrix.  Everything that depends only on
``(P, A_eq, A_in)`` is cached in a :class:`QpSolver` workspace, so a sequence
of problems differing in ``q``, ``b_eq``, ``lo`` or ``hi`` costs O(d^2) each.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, qr, solve_triangular

INF = 1e20
_EQ_RANK_RTOL = 1e-10


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class QpSettings:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-9
    max_iter: int = 20000


def _clean_bounds(b, size, sign):
    if b is None:
        return np.full(size, sign * np.inf)
    b = np.array(b, dtype=float).reshape(-1)
    b[b >= INF] = np.inf
    b[b <= -INF] = -np.inf
    return b


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        d = P.shape[0]
        if P.shape != (d, d):
            raise ValueError("P must be square")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max(initial=0))):
            raise ValueError("P must be symmetric")
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if q.shape != (d,):
            raise ValueError("q has the wrong length")
        A_eq = np.zeros((0, d)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        if A_eq.ndim != 2 or A_eq.shape[1] != d or b_eq.shape != (A_eq.shape[0],):
            raise ValueError("equality constraint dimensions are inconsistent")
        A_in = np.zeros((0, d)) if self.A_in is None else np.asarray(self.A_in, dtype=float)
        if A_in.ndim != 2 or A_in.shape[1] != d:
            raise ValueError("inequality matrix has the wrong width")
        lo = _clean_bounds(self.lo, A_in.shape[0], -1)
        hi = _clean_bounds(self.hi, A_in.shape[0], +1)
        if lo.shape != (A_in.shape[0],) or hi.shape != lo.shape:
            raise ValueError("bound vectors have the wrong length")
        if np.any(lo > hi):
            raise ValueError("lo must not exceed hi")
        keep = np.isfinite(lo) | np.isfinite(hi)
        if not keep.all():
            A_in, lo, hi = A_in[keep], lo[keep], hi[keep]
        for name, val in (("P", P), ("q", q), ("A_eq", A_eq), ("b_eq", b_eq),
                          ("A_in", A_in), ("lo", lo), ("hi", hi)):
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def with_data(self, q=None, b_eq=None, lo=None, hi=None) -> "QuadraticProgram":
        """Copy sharing the matrices (and hence any solver workspace)."""
        new = object.__new__(QuadraticProgram)
        for name in ("P", "A_eq", "A_in"):
            object.__setattr__(new, name, getattr(self, name))
        object.__setattr__(new, "q", self.q if q is None else np.asarray(q, dtype=float))
        object.__setattr__(new, "b_eq", self.b_eq if b_eq is None else np.asarray(b_eq, dtype=float))
        object.__setattr__(new, "lo", self.lo if lo is None else _clean_bounds(lo, len(self.lo), -1))
        object.__setattr__(new, "hi", self.hi if hi is None else _clean_bounds(hi, len(self.hi), 1))
        return new

    def dump_csv(self, directory) -> None:
        """Write P, q, A_eq, b_eq, A_in, lo, hi as separate CSV files."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("P", "q", "A_eq", "b_eq", "A_in", "lo", "hi"):
            val = np.atleast_2d(getattr(self, name))
            if name in ("q", "b_eq", "lo", "hi"):
                val = val.reshape(-1, 1)
            np.savetxt(out / f"{name}.csv", val, delimiter=",", fmt="%.17g")

    @classmethod
    def load_csv(cls, directory) -> "QuadraticProgram":
        src = Path(directory)

        def load(name, cols=None):
            a = np.loadtxt(src / f"{name}.csv", delimiter=",", ndmin=2)
            return a.reshape(-1) if cols == 1 else a

        P = load("P")
        d = P.shape[0]
        A_eq = load("A_eq").reshape(-1, d)
        A_in = load("A_in").reshape(-1, d)
        return cls(P, load("q", 1), A_eq, load("b_eq", 1)[: A_eq.shape[0]], A_in,
                   load("lo", 1)[: A_in.shape[0]], load("hi", 1)[: A_in.shape[0]])


@dataclass
class QpSolution:
    x: np.ndarray
    status: QpStatus
    kkt_residual: float
    iterations: int
    objective: float = float("nan")
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_in: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


class _Workspace:
    """Factorizations that depend only on ``(P, A_eq, A_in)``."""

    def __init__(self, P, A_eq, A_in, prox: float = 0.0):
        self.P, self.A_eq, self.A_in = P, A_eq, A_in
        d = P.shape[0]
        self.prox = prox
        p = A_eq.shape[0]
        if p:
            Q, R, piv = qr(A_eq.T, pivoting=True, mode="full")
            diag = np.abs(np.diag(R))
            r = int(np.sum(diag > _EQ_RANK_RTOL * diag[0])) if diag.size and diag[0] > 0 else 0
            self.eq_rank = r
            self.piv = piv[:r]
            self.R_r = R[:r, :r]
            self.Y = Q[:, :r]          # range of A_eq'
            self.Z = Q[:, r:]          # null space of A_eq
        else:
            self.eq_rank = 0
            self.piv = np.zeros(0, dtype=int)
            self.R_r = np.zeros((0, 0))
            self.Y = np.zeros((d, 0))
            self.Z = np.eye(d)
        Z = self.Z
        Hz = Z.T @ P @ Z
        if prox:
            Hz = Hz + prox * np.eye(Hz.shape[0])
        self.chol = cho_factor(Hz, lower=True, check_finite=False)
        L = np.tril(self.chol[0])
        self.L = L
        diagL = np.abs(np.diag(L))
        if diagL.size and (not np.all(np.isfinite(diagL))
                           or diagL.min() <= 1e-7 * max(1.0, diagL.max())):
            raise np.linalg.LinAlgError("reduced Hessian is not positive definite")
        self.GZ = A_in @ Z
        M = solve_triangular(L, self.GZ.T, lower=True, check_finite=False) if Z.shape[1] else \
            np.zeros((0, A_in.shape[0]))
        self.M = M                 # L^-1 GZ'
        self.K = M.T @ M
        # pieces that let the particular solution enter through its eq_rank coordinates
        self.Zt = np.ascontiguousarray(Z.T)
        self.ZtPY = Z.T @ P @ self.Y
        self.AinY = A_in @ self.Y

    def matches(self, qp: QuadraticProgram) -> bool:
        return qp.P is self.P and qp.A_eq is self.A_eq and qp.A_in is self.A_in

    def eq_coords(self, b):
        """Coordinates ``t`` of the minimum-norm solution ``Y t`` of the independent rows."""
        if self.eq_rank == 0:
            return np.zeros(0)
        return solve_triangular(self.R_r.T, b[self.piv], lower=True, check_finite=False)

    def particular(self, b):
        return self.Y @ self.eq_coords(b)


class QpSolver:
    """Reusable solver; caches the workspace of the last matrix triple it saw.

    A single instance is not thread-safe; create one per thread.
    """

    def __init__(self, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()
        self._ws: _Workspace | None = None

    def _workspace(self, qp: QuadraticProgram) -> _Workspace:
        if self._ws is None or not self._ws.matches(qp):
            try:
                self._ws = _Workspace(qp.P, qp.A_eq, qp.A_in)
            except np.linalg.LinAlgError:
                scale = max(1.0, float(np.abs(np.diag(qp.P)).max(initial=0.0)))
                self._ws = _Workspace(qp.P, qp.A_eq, qp.A_in, prox=1e-6 * scale)
        return self._ws

    def solve(self, qp: QuadraticProgram) -> QpSolution:
        ws = self._workspace(qp)
        st = self.settings
        t = ws.eq_coords(qp.b_eq)
        x_p = ws.Y @ t
        if qp.A_eq.shape[0]:
            eq_res = np.abs(qp.A_eq @ x_p - qp.b_eq).max()
            if eq_res > st.abs_tol * max(1.0, np.abs(qp.b_eq).max()) * 1e2:
                return self._finish(ws, qp, x_p, QpStatus.PRIMAL_INFEASIBLE, 0, None, None)
        f0 = ws.Zt @ qp.q + ws.ZtPY @ t
        c_p = ws.AinY @ t

        if not ws.prox:
            w, active, u, it, status = self._dual_active_set(ws, f0, c_p, qp.lo, qp.hi,
                                                             st.max_iter)
        else:
            # proximal-point outer loop for a singular reduced Hessian
            w = np.zeros(ws.Z.shape[1])
            it = 0
            status = QpStatus.MAX_ITERATIONS
            while it < st.max_iter:
                w_new, active, u, k, status = self._dual_active_set(
                    ws, f0 - ws.prox * w, c_p, qp.lo, qp.hi, st.max_iter - it)
                it += k + 1
                step = np.abs(w_new - w).max(initial=0.0)
                w = w_new
                if status is not QpStatus.OPTIMAL or step <= st.abs_tol * 1e-2 * max(
                        1.0, np.abs(w).max(initial=0.0)):
                    break
            else:
                status = QpStatus.MAX_ITERATIONS
        x = x_p + ws.Z @ w
        return self._finish(ws, qp, x, status, it, active, u)

    def _dual_active_set(self, ws, f0, c_p, lo, hi, max_iter):
        """Goldfarb-Idnani iterations in the reduced space.

        The primal iterate is ``w = L^-T (M_A (sig_A * u_A) - h)`` with
        ``h = L^-1 f0``; only the constraint values ``c = A_in x`` are tracked,
        through the Gram matrix ``K = M'M``.
        """
        st = self.settings
        K = ws.K
        h = solve_triangular(ws.L, f0, lower=True, check_finite=False) if f0.size else f0
        c = c_p - ws.M.T @ h
        r_in = len(lo)
        tol = st.abs_tol + st.rel_tol * np.maximum(np.abs(np.where(np.isfinite(lo), lo, 0)),
                                                   np.abs(np.where(np.isfinite(hi), hi, 0)))
        act: list[int] = []    # row indices
        sig: list[float] = []  # +1 lower bound active, -1 upper bound active
        u = np.zeros(0)
        in_act = np.zeros(r_in, dtype=bool)
        it = 0
        status = QpStatus.OPTIMAL
        while True:
            if r_in == 0:
                break
            viol_lo = np.where(in_act, -np.inf, lo - c)
            viol_hi = np.where(in_act, -np.inf, c - hi)
            j_lo, j_hi = int(np.argmax(viol_lo)), int(np.argmax(viol_hi))
            if viol_lo[j_lo] >= viol_hi[j_hi]:
                jp, sp, viol = j_lo, 1.0, viol_lo[j_lo]
            else:
                jp, sp, viol = j_hi, -1.0, viol_hi[j_hi]
            if viol <= tol[jp]:
                break
            bound = lo[jp] if sp > 0 else hi[jp]
            u_plus = np.append(u, 0.0)
            while True:
                it += 1
                if it > max_iter:
                    status = QpStatus.MAX_ITERATIONS
                    return self._reduced_w(ws, h, act, sig, u), self._signed(r_in, act, sig, u), None, it, status
                s_p = sp * (c[jp] - bound)          # < 0 while violated
                sa = np.array(sig)
                if act:
                    KAA = K[np.ix_(act, act)] * np.outer(sa, sa)
                    kAp = K[act, jp] * sa * sp
                    r = np.linalg.solve(KAA, kAp)
                    zn = K[jp, jp] - kAp @ r
                    dc = sp * K[:, jp] - K[:, act] @ (sa * r)
                else:
                    r = np.zeros(0)
                    zn = K[jp, jp]
                    dc = sp * K[:, jp]
                t2 = -s_p / zn if zn > 1e-12 * max(1.0, K[jp, jp]) else np.inf
                t1, k_drop = np.inf, -1
                for a, ra in enumerate(r):
                    if ra > 1e-14 and u_plus[a] / ra < t1:
                        t1, k_drop = u_plus[a] / ra, a
                t = min(t1, t2)
                if not np.isfinite(t):
                    status = QpStatus.PRIMAL_INFEASIBLE
                    return self._reduced_w(ws, h, act, sig, u), self._signed(r_in, act, sig, u), None, it, status
                if np.isfinite(t2):
                    c = c + t * dc
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                if t2 <= t1:
                    act.append(jp)
                    sig.append(sp)
                    in_act[jp] = True
                    u = u_plus
                    break
                # partial step: drop the blocking constraint and retry
                in_act[act[k_drop]] = False
                del act[k_drop]
                del sig[k_drop]
                u_plus = np.delete(u_plus, k_drop)
        return self._reduced_w(ws, h, act, sig, u), self._signed(r_in, act, sig, u), None, it, status

    @staticmethod
    def _reduced_w(ws, h, act, sig, u):
        rhs = -h
        if act:
            rhs = rhs + ws.M[:, act] @ (np.array(sig) * u)
        if not rhs.size:
            return rhs
        return solve_triangular(ws.L, rhs, lower=True, trans="T", check_finite=False)

    def _finish(self, ws, qp, x, status, it, active, u):
        z = np.zeros(qp.A_in.shape[0]) if active is None else active
        Px = qp.P @ x
        grad = Px + qp.q - qp.A_in.T @ z
        if qp.A_eq.shape[0]:
            # multipliers of the independent rows from the cached QR; dependent rows get 0
            y = np.zeros(qp.A_eq.shape[0])
            if ws.eq_rank:
                y[ws.piv] = solve_triangular(ws.R_r, ws.Y.T @ grad, check_finite=False)
            eq_term = qp.A_eq.T @ y
            r_eq = np.abs(qp.A_eq @ x - qp.b_eq).max() / max(
                1.0, np.abs(qp.A_eq @ x).max(), np.abs(qp.b_eq).max())
        else:
            y = np.zeros(0)
            eq_term = np.zeros_like(x)
            r_eq = 0.0
        stat = grad - eq_term
        scale = max(1.0, np.abs(Px).max(initial=0), np.abs(qp.q).max(initial=0),
                    np.abs(qp.A_in.T @ z).max(initial=0), np.abs(eq_term).max(initial=0))
        r_stat = np.abs(stat).max(initial=0) / scale
        if qp.A_in.shape[0]:
            Ax = qp.A_in @ x
            viol = np.maximum(qp.lo - Ax, Ax - qp.hi).max()
            r_in = max(0.0, viol) / max(1.0, np.abs(Ax).max())
            slack = np.where(z > 0, Ax - np.where(np.isfinite(qp.lo), qp.lo, Ax),
                             np.where(np.isfinite(qp.hi), qp.hi, Ax) - Ax)
            r_comp = np.abs(z * slack).max() / max(1.0, np.abs(z).max() * max(1.0, np.abs(Ax).max()))
        else:
            r_in = r_comp = 0.0
        kkt = float(max(r_stat, r_eq, r_in, r_comp))
        if status is QpStatus.OPTIMAL and kkt > self.settings.abs_tol:
            # accuracy loss from conditioning; keep the iterate but flag it
            status = QpStatus.MAX_ITERATIONS
        return QpSolution(x=x, status=status, kkt_residual=kkt, iterations=it,
                          objective=float(0.5 * x @ Px + qp.q @ x), y_eq=y, z_in=z)

    @staticmethod
    def _signed(r_in, act, sig, u):
        # z > 0: lower bound active; z < 0: upper bound active
        z = np.zeros(r_in)
        if act:
            z[act] = np.asarray(sig) * u
        return z


def solve(qp: QuadraticProgram, settings: QpSettings | None = None) -> QpSolution:
    """One-shot solve with a fresh workspace."""
    return QpSolver(settings).solve(qp)
