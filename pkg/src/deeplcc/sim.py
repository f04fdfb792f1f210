"""Nonlinear platoon simulation, head-vehicle scenarios, data collection and metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ._backend import kernels
from .datamat import ExcitationCertificate, is_hankel_exciting, write_series_csv, read_series_csv
from .errors import ControllerFault, DeepLccError, ExcitationFailure
from .model import FleetTopology, LinearDiscreteModel, OvmParams, equilibrium

AAVE_MIN_HEAD_SPEED = 0.1

DEFAULT_WAYPOINTS = ((0.0, 15.0), (10.0, 15.0), (14.0, 11.0), (24.0, 11.0), (30.0, 17.0),
                     (40.0, 17.0), (45.0, 13.0), (55.0, 13.0), (60.0, 15.0), (70.0, 15.0))


class ScenarioKind(str, Enum):
    DRIVE_CYCLE = "drive_cycle"
    EMERGENCY_BRAKE = "emergency_brake"
    REPLAY_CSV = "replay_csv"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind = ScenarioKind.EMERGENCY_BRAKE
    duration: float = 30.0
    v_star: float = 15.0
    waypoints: tuple = DEFAULT_WAYPOINTS
    brake_start: float = 4.0
    brake_decel: float = -5.0
    brake_floor: float = 5.0
    dwell_until: float = 8.0
    recovery_rate: float = 1.0
    csv_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "waypoints",
                           tuple((float(t), float(v)) for t, v in self.waypoints))
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.kind is ScenarioKind.EMERGENCY_BRAKE:
            if not self.brake_decel < 0:
                raise ValueError("brake deceleration must be negative")
            if self.recovery_rate <= 0:
                raise ValueError("recovery rate must be positive")
        if self.kind is ScenarioKind.DRIVE_CYCLE:
            ts = [t for t, _ in self.waypoints]
            if len(ts) < 2 or any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("waypoint times must be strictly increasing")
        if self.kind is ScenarioKind.REPLAY_CSV and not self.csv_path:
            raise ValueError("replay scenarios need csv_path")

    def steps(self, dt: float) -> int:
        return int(round(self.duration / dt))

    def head_velocity(self, dt: float) -> np.ndarray:
        """Head speed on the grid ``k*dt`` for ``k = 0..steps``."""
        t = np.arange(self.steps(dt) + 1) * dt
        if self.kind is ScenarioKind.DRIVE_CYCLE:
            ts, vs = zip(*self.waypoints)
            return np.interp(t, ts, vs)
        if self.kind is ScenarioKind.REPLAY_CSV:
            ts, vs = read_head_csv(self.csv_path)
            return np.interp(t, ts, vs)
        v0 = self.v_star
        t_floor = self.brake_start + (v0 - self.brake_floor) / -self.brake_decel
        t_rec = max(self.dwell_until, t_floor)
        v = np.full_like(t, v0)
        braking = (t >= self.brake_start) & (t < t_floor)
        v[braking] = v0 + self.brake_decel * (t[braking] - self.brake_start)
        v[(t >= t_floor) & (t < t_rec)] = self.brake_floor
        rec = t >= t_rec
        v[rec] = np.minimum(v0, self.brake_floor + self.recovery_rate * (t[rec] - t_rec))
        return v


def read_head_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Columns ``t, v_head``; extra columns are ignored."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(ln for ln in fh if not ln.startswith("#"))]
    t = np.array([float(r["t"]) for r in rows])
    v = np.array([float(r["v_head"]) for r in rows])
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("replay CSV needs at least two rows with increasing t")
    return t, v


@dataclass(frozen=True)
class NoiseSpec:
    half_width: float = 0.3
    seed: int | None = None

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("noise half-width must be non-negative")

    def draw(self, steps: int, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        if self.half_width == 0:
            return np.zeros((steps, n))
        return rng.uniform(-self.half_width, self.half_width, size=(steps, n))


@dataclass(frozen=True)
class PlantState:
    p: np.ndarray
    v: np.ndarray

    def spacings(self) -> np.ndarray:
        return self.p[:-1] - self.p[1:]

    @classmethod
    def at_equilibrium(cls, n: int, s_star: float, v_star: float) -> "PlantState":
        return cls(p=-s_star * np.arange(n + 1, dtype=float), v=np.full(n + 1, float(v_star)))


def error_state(fleet: FleetTopology, p, v, s_star, v_star) -> np.ndarray:
    """``(s_1 - s*, v_1 - v*, ..., s_n - s*, v_n - v*)``."""
    s = p[:-1] - p[1:]
    x = np.empty(2 * fleet.n)
    x[0::2] = s - s_star
    x[1::2] = v[1:] - v_star
    return x


def output_of(fleet: FleetTopology, x: np.ndarray) -> np.ndarray:
    cav = [j for i in fleet.cav_indices for j in (2 * i - 2, 2 * i - 1)]
    hdv = [2 * j - 1 for j in fleet.hdv_indices]
    return x[cav + hdv]


@dataclass
class TrajectoryRecord:
    """Samples ``(u(k), eps(k), y(k))`` with y measured after step k."""

    u: np.ndarray
    eps: np.ndarray
    y: np.ndarray
    dt: float = 0.05
    masked: bool = False

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(len(self.eps), -1)
        self.eps = np.asarray(self.eps, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(len(self.eps), -1)

    @property
    def T(self) -> int:
        return self.eps.size

    def head(self, T: int) -> "TrajectoryRecord":
        return TrajectoryRecord(self.u[:T], self.eps[:T], self.y[:T], self.dt, self.masked)

    def to_csv(self, path, comment: str | None = None) -> None:
        notes = ["masked=true"] if self.masked else []
        if comment:
            notes.append(comment)
        write_series_csv(path, {"u": self.u, "eps": self.eps, "y": self.y}, self.dt,
                         "; ".join(notes) or None)

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        with open(path) as fh:
            first = fh.readline()
        t, cols = read_series_csv(path)
        dt = float(t[1] - t[0]) if t.size > 1 else 0.05
        return cls(cols["u"], cols["eps"].reshape(-1), cols["y"], dt,
                   masked=first.startswith("#") and "masked=true" in first)


@dataclass
class CollectedData:
    record: TrajectoryRecord
    certificate: ExcitationCertificate
    dither: np.ndarray


def collect_data(fleet: FleetTopology, ovm: OvmParams, v_star: float, T: int, *,
                 input_hw: float = 1.0, head_hw: float = 1.0,
                 noise: NoiseSpec | None = None, dt: float = 0.05,
                 rng: np.random.Generator | None = None,
                 excitation_order: int | None = None) -> CollectedData:
    """Offline experiment around the equilibrium.

    CAVs drive with the OVM law plus i.i.d. dither ``U[-input_hw, input_hw]``
    (the pure double integrator would drift without bound); the recorded
    input is the applied CAV acceleration.  The head speed error is i.i.d.
    ``U[-head_hw, head_hw]``.  When ``excitation_order`` is given the
    exogenous signals ``(dither, eps)`` must be Hankel exciting of that order.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    noise = noise or NoiseSpec()
    eq = equilibrium(ovm, v_star)
    m, n = fleet.m, fleet.n
    dither = rng.uniform(-input_hw, input_hw, size=(T, m)) if input_hw > 0 else np.zeros((T, m))
    eps = rng.uniform(-head_hw, head_hw, size=T) if head_hw > 0 else np.zeros(T)
    w = noise.draw(T, n, rng)
    mask = fleet.cav_mask()
    cav_rows = np.array(fleet.cav_indices, dtype=int) - 1
    hdv_noise = np.where(mask[None, :] == 1, 0.0, w)
    state = PlantState.at_equilibrium(n, eq.s_star, v_star)
    p, v = state.p.copy(), state.v.copy()
    v[0] = v_star + eps[0]
    U = np.empty((T, m))
    Y = np.empty((T, fleet.p))
    alpha, beta, s_st, s_go, v_max = ovm.as_tuple()
    for k in range(T):
        s = p[:-1] - p[1:]
        nominal = kernels.ovm_accel(s, v[:-1] - v[1:], v[1:].copy(), alpha, beta, s_st, s_go, v_max)
        cav_u = np.zeros(n)
        cav_u[cav_rows] = nominal[cav_rows] + dither[k]
        U[k] = cav_u[cav_rows]
        v_next_head = v_star + (eps[k + 1] if k + 1 < T else eps[k])
        p, v, _ = kernels.platoon_step(p, v, v_next_head, mask, cav_u, hdv_noise[k],
                                       alpha, beta, s_st, s_go, v_max, dt)
        Y[k] = output_of(fleet, error_state(fleet, p, v, eq.s_star, v_star))
    record = TrajectoryRecord(U, eps, Y, dt)
    if excitation_order is not None:
        cert = is_hankel_exciting(np.column_stack([dither, eps]), excitation_order)
        if not cert.exciting:
            raise ExcitationFailure(f"collected data is not exciting: {cert.summary()}", cert)
    else:
        cert = ExcitationCertificate(True, 0, 0)
    return CollectedData(record, cert, dither)


def linear_rollout(model: LinearDiscreteModel, x0, u, eps) -> tuple[np.ndarray, np.ndarray]:
    """States ``x(0..K)`` and outputs measured after each step for a linear plant."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    eps = np.asarray(eps, dtype=float).reshape(-1)
    if u.shape[0] != eps.size and u.size == 0:
        u = np.zeros((eps.size, 0))
    X = np.empty((eps.size + 1, model.A_d.shape[0]))
    X[0] = x0
    for k in range(eps.size):
        X[k + 1] = model.A_d @ X[k] + model.B_d @ u[k] + model.H_d * eps[k]
    return X, X[1:] @ model.C_d.T


@dataclass
class LinearRun:
    X: np.ndarray
    U: np.ndarray
    results: list


def simulate_linear(model: LinearDiscreteModel, controller, eps, x0=None) -> LinearRun:
    """Closed loop on the discrete linear model (noise free)."""
    eps = np.asarray(eps, dtype=float).reshape(-1)
    nx, m = model.A_d.shape[0], model.B_d.shape[1]
    from .controller import Observation

    x = np.zeros(nx) if x0 is None else np.asarray(x0, dtype=float)
    X, U, results = [x.copy()], [], []
    for k in range(eps.size):
        res = controller.step(Observation(y=model.C_d @ x, eps=eps[k], x=x.copy()))
        u = np.asarray(res.u, dtype=float).reshape(m)
        x = model.A_d @ x + model.B_d @ u + model.H_d * eps[k]
        X.append(x.copy())
        U.append(u)
        results.append(res)
    return LinearRun(np.array(X), np.array(U).reshape(-1, m), results)


@dataclass
class RunLog:
    fleet: FleetTopology
    dt: float
    v_star: float
    s_star: float
    P: np.ndarray            # (K+1, n+1)
    V: np.ndarray            # (K+1, n+1)
    A: np.ndarray            # (K, n) accelerations of vehicles 1..n
    U: np.ndarray            # (K, m) CAV inputs
    eps: np.ndarray          # (K,)
    diagnostics: list = field(default_factory=list)
    collision_events: int = 0
    tag: str = ""
    v_ref: np.ndarray | None = None   # (K+1,) reference velocity per step
    s_ref: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.A.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def outputs(self) -> np.ndarray:
        """Outputs at every time ``0..K``."""
        K1 = self.P.shape[0]
        v_ref = self.v_ref if self.v_ref is not None else np.full(K1, self.v_star)
        s_ref = self.s_ref if self.s_ref is not None else np.full(K1, self.s_star)
        return np.array([output_of(self.fleet, error_state(self.fleet, p, v, sr, vr))
                         for p, v, sr, vr in zip(self.P, self.V, s_ref, v_ref)])

    def record(self) -> TrajectoryRecord:
        return TrajectoryRecord(self.U, self.eps, self.outputs()[1:], self.dt)

    def to_csv(self, path, header_comment: str | None = None) -> None:
        n, m = self.fleet.n, self.fleet.m
        K = self.steps
        fuel = fuel_rate(np.maximum(self.V[:K, 2:], 0.0), self.A[:, 1:]).sum(axis=1) \
            if n >= 2 else np.zeros(K)
        cols = (["t"] + [f"p_{i}" for i in range(n + 1)] + [f"v_{i}" for i in range(n + 1)]
                + [f"u_{k + 1}" for k in range(m)]
                + ["eps", "fuel_rate_total", "status", "objective", "kkt_residual"])
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(K):
                d = self.diagnostics[k] if k < len(self.diagnostics) else None
                row = [k * self.dt, *self.P[k], *self.V[k], *self.U[k], self.eps[k], fuel[k]]
                row = [repr(float(x)) for x in row]
                if d is None:
                    row += ["open_loop", "nan", "nan"]
                else:
                    row += [d.status, repr(float(d.objective)), repr(float(d.kkt_residual))]
                w.writerow(row)
            # terminal state, so the file alone reproduces the velocity metrics
            tail = [K * self.dt, *self.P[K], *self.V[K]]
            w.writerow([repr(float(x)) for x in tail] + ["nan"] * (m + 2) + ["final", "nan", "nan"])


@dataclass(frozen=True)
class RunSummary:
    """Fuel and AAVE recomputed from a run log CSV."""

    path: str
    total_fuel: float
    aave: float


def summarize_run_csv(path, min_head_speed: float = AAVE_MIN_HEAD_SPEED) -> RunSummary:
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or "fuel_rate_total" not in reader.fieldnames:
        raise ValueError(f"{path}: not a run log")
    vcols = sorted((c for c in reader.fieldnames if c.startswith("v_")), key=lambda c: int(c[2:]))
    for r in reader:
        rows.append((float(r["t"]), float(r["fuel_rate_total"]), [float(r[c]) for c in vcols]))
    if len(rows) < 2:
        raise ValueError(f"{path}: run log has fewer than two rows")
    t = np.array([r[0] for r in rows])
    fuel = np.array([r[1] for r in rows])
    V = np.array([r[2] for r in rows])
    dt = float(t[1] - t[0])
    v0 = V[:, 0]
    keep = v0 > min_head_speed
    a = float((np.abs(V[keep, 1:] - v0[keep, None]) / v0[keep, None]).mean()) if keep.any() \
        else float("nan")
    return RunSummary(str(path), float(np.nansum(fuel) * dt), a)


def reference_velocity(v_head: np.ndarray, v_star: float, window: int) -> np.ndarray:
    """Trailing mean of the head speed over ``window`` past steps (``v_star`` at k=0).

    ``window = 0`` keeps the reference fixed at ``v_star``.
    """
    K1 = v_head.size
    if window <= 0:
        return np.full(K1, float(v_star))
    c = np.concatenate([[0.0], np.cumsum(v_head)])
    k = np.arange(K1)
    lo = np.maximum(k - window, 0)
    ref = np.where(k > 0, (c[k] - c[lo]) / np.maximum(k - lo, 1), v_star)
    return ref


def simulate(scn: ScenarioSpec, fleet: FleetTopology, ovm: OvmParams, controller=None,
             noise: NoiseSpec | None = None, dt: float = 0.05,
             rng: np.random.Generator | None = None, tag: str = "",
             reference_window: int = 0) -> RunLog:
    """Explicit-Euler closed loop.

    Without a controller every vehicle (CAV slots included) follows the OVM
    with acceleration noise.  With a controller the CAVs apply its input and
    only HDVs receive noise.  Error coordinates are taken about a reference
    equilibrium that follows the trailing head-speed mean when
    ``reference_window > 0``; the controller is told of every change through
    ``rebase`` so its stored past stays consistent.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    from .controller import Observation

    noise = noise or NoiseSpec()
    rng = rng if rng is not None else np.random.default_rng(noise.seed)
    eq = equilibrium(ovm, scn.v_star)
    v_head = scn.head_velocity(dt)
    K = v_head.size - 1
    n, m = fleet.n, fleet.m
    w = noise.draw(K, n, rng)
    state = PlantState.at_equilibrium(n, eq.s_star, scn.v_star)
    p0, v0 = state.p.copy(), state.v.copy()
    v0[0] = v_head[0]
    params = ovm.as_tuple()
    v_ref = reference_velocity(v_head, scn.v_star, reference_window)
    s_ref = np.array([eq.s_star if vr == scn.v_star else equilibrium(ovm, vr).s_star
                      for vr in v_ref])
    eps = v_head[:K] - v_ref[:K]
    if controller is None:
        zeros = np.zeros(n, dtype=np.uint8)
        P, V, A = kernels.integrate_platoon(p0, v0, v_head, zeros, np.zeros((K, n)), w,
                                            *params, dt)
        U = np.zeros((K, m))
        diags: list = []
    else:
        mask = fleet.cav_mask()
        cav_rows = np.array(fleet.cav_indices, dtype=int) - 1
        w = np.where(mask[None, :] == 1, 0.0, w)
        P = np.empty((K + 1, n + 1))
        V = np.empty((K + 1, n + 1))
        A = np.empty((K, n))
        U = np.empty((K, m))
        P[0], V[0] = p0, v0
        diags = []
        cav_u = np.zeros(n)
        is_cav_spacing = np.zeros(fleet.p, dtype=bool)
        is_cav_spacing[0:2 * m:2] = True
        for k in range(K):
            if k and (v_ref[k] != v_ref[k - 1]):
                dy = np.where(is_cav_spacing, s_ref[k - 1] - s_ref[k], v_ref[k - 1] - v_ref[k])
                controller.rebase(dy, v_ref[k - 1] - v_ref[k])
            x = error_state(fleet, P[k], V[k], s_ref[k], v_ref[k])
            try:
                res = controller.step(Observation(y=output_of(fleet, x), eps=eps[k], x=x))
            except ControllerFault:
                raise
            except DeepLccError as exc:
                raise ControllerFault(str(exc), k) from exc
            U[k] = res.u
            diags.append(res.diagnostics)
            cav_u[cav_rows] = res.u
            P[k + 1], V[k + 1], A[k] = kernels.platoon_step(P[k], V[k], v_head[k + 1], mask,
                                                             cav_u, w[k], *params, dt)
    collisions = int(np.sum(P[:, :-1] - P[:, 1:] <= 0))
    return RunLog(fleet, dt, scn.v_star, eq.s_star, P, V, A, U, eps, diags, collisions, tag,
                  v_ref, s_ref)


def fuel_rate(v, a):
    """Instantaneous fuel rate in mL/s (vectorized)."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    R = 0.333 + 0.00108 * v ** 2 + 1.2 * a
    burn = 0.444 + 0.090 * R * v + np.where(a > 0, 0.054 * a ** 2 * v, 0.0)
    out = np.where(R > 0, burn, 0.444)
    return out if out.ndim else float(out)


def per_vehicle_fuel(log: RunLog) -> np.ndarray:
    """Fuel (mL) of vehicles 1..n by the rectangle rule."""
    K = log.steps
    rates = fuel_rate(np.maximum(log.V[:K, 1:], 0.0), log.A)
    return rates.sum(axis=0) * log.dt


def total_fuel(log: RunLog) -> float:
    """Vehicles 2..n; the first follower is not influenced by the CAVs."""
    return float(per_vehicle_fuel(log)[1:].sum())


def aave(log: RunLog, min_head_speed: float = AAVE_MIN_HEAD_SPEED) -> tuple[float, int]:
    """Mean of ``|v_i - v_0| / v_0`` over time and vehicles 1..n, and the excluded step count."""
    v0 = log.V[:, 0]
    keep = v0 > min_head_speed
    if not keep.any():
        return float("nan"), int((~keep).sum())
    rel = np.abs(log.V[keep, 1:] - v0[keep, None]) / v0[keep, None]
    return float(rel.mean()), int((~keep).sum())


def quadratic_cost(log: RunLog, Q: np.ndarray, R: np.ndarray) -> float:
    """``sum_k y(k)'Q y(k) + u(k)'R u(k)`` over the run, in error coordinates."""
    Y = log.outputs()[1:]
    return float(np.einsum("ki,ij,kj->", Y, Q, Y) + np.einsum("ki,ij,kj->", log.U, R, log.U))


@dataclass(frozen=True)
class MetricsReport:
    total_fuel: float
    aave: float
    quadratic_cost: float
    collision_events: int
    per_vehicle_fuel: tuple
    aave_excluded_steps: int = 0
    flagged_steps: int = 0
    solve_time_mean: float = float("nan")
    solve_time_max: float = float("nan")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def metrics(log: RunLog, Q: np.ndarray, R: np.ndarray) -> MetricsReport:
    a, excluded = aave(log)
    times = [d.solve_time for d in log.diagnostics if not d.warmup]
    return MetricsReport(
        total_fuel=total_fuel(log), aave=a, quadratic_cost=quadratic_cost(log, Q, R),
        collision_events=log.collision_events,
        per_vehicle_fuel=tuple(float(f) for f in per_vehicle_fuel(log)),
        aave_excluded_steps=excluded,
        flagged_steps=sum(1 for d in log.diagnostics if d.flagged),
        solve_time_mean=float(np.mean(times)) if times else float("nan"),
        solve_time_max=float(np.max(times)) if times else float("nan"))


def save_record(path, rec: TrajectoryRecord, comment: str | None = None) -> None:
    rec.to_csv(Path(path), comment)
