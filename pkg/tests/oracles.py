"""Independent reference computations shared by the test modules."""
import itertools

import numpy as np


def controllable_system(rng, nx, m, p, max_tries=100):
    """Random stable (A, B, H, C) with (A, [B H]) controllable and (C, A) observable."""
    for _ in range(max_tries):
        A = rng.standard_normal((nx, nx))
        A *= 0.9 / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
        B = rng.standard_normal((nx, m))
        H = rng.standard_normal(nx)
        C = rng.standard_normal((p, nx))
        Bh = np.column_stack([H, B])
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ Bh for k in range(nx)])
        obsv = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(nx)])
        if np.linalg.matrix_rank(ctrb) == nx and np.linalg.matrix_rank(obsv) == nx:
            return A, B, H, C
    raise RuntimeError("no controllable draw")


def rollout(A, B, H, C, x0, u, eps, Lu=None, Ly=None):
    """Samples ``y(k) = C x(k) + Ly`` for k = 0..T-1 with ``x+ = Ax + Bu + H eps + Lu``."""
    nx = A.shape[0]
    Lu = np.zeros(nx) if Lu is None else Lu
    Ly = np.zeros(C.shape[0]) if Ly is None else Ly
    x = np.array(x0, dtype=float)
    ys = []
    for k in range(len(eps)):
        ys.append(C @ x + Ly)
        x = A @ x + B @ u[k] + H * eps[k] + Lu
    return np.array(ys)


def brute_force_qp(P, q, A_eq, b_eq, G, h):
    """min 1/2 x'Px + q'x  s.t.  A_eq x = b_eq,  G x <= h  by enumerating active sets.

    Returns the best objective over all KKT-feasible active sets, or None.
    """
    d = P.shape[0]
    n_in = G.shape[0]
    best = None
    for r in range(min(n_in, d - A_eq.shape[0]) + 1):
        for act in itertools.combinations(range(n_in), r):
            act = list(act)
            M = np.vstack([A_eq, G[act]]) if act else A_eq
            rhs = np.concatenate([b_eq, h[act]]) if act else b_eq
            k = M.shape[0]
            K = np.block([[P, M.T], [M, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, rhs]))
            except np.linalg.LinAlgError:
                continue
            x = sol[:d]
            if not np.allclose(M @ x, rhs, atol=1e-8 * max(1.0, np.abs(rhs).max(initial=0))):
                continue  # singular KKT matrix: solve() returned garbage
            lam = sol[d + A_eq.shape[0]:]
            if np.any(G @ x > h + 1e-9) or np.any(lam < -1e-9):
                continue
            f = 0.5 * x @ P @ x + q @ x
            if best is None or f < best[0]:
                best = (f, x)
    return best
