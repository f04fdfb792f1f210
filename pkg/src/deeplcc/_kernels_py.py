"""Pure-numpy kernels, used when the compiled extension is unavailable."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _desired_velocity(s, s_st, s_go, v_max):
    mid = 0.5 * v_max * (1.0 - np.cos(np.pi * (s - s_st) / (s_go - s_st)))
    return np.where(s <= s_st, 0.0, np.where(s >= s_go, v_max, mid))


def ovm_accel(s, sdot, v, alpha, beta, s_st, s_go, v_max):
    s = np.asarray(s, dtype=np.float64)
    return alpha * (_desired_velocity(s, s_st, s_go, v_max) - v) + beta * np.asarray(sdot)


def platoon_step(p, v, v_head_next, cav_mask, cav_u, noise,
                 alpha, beta, s_st, s_go, v_max, dt):
    cav = np.asarray(cav_mask, dtype=bool)
    hdv_acc = ovm_accel(p[:-1] - p[1:], v[:-1] - v[1:], v[1:],
                        alpha, beta, s_st, s_go, v_max) + noise
    acc = np.where(cav, cav_u, hdv_acc)
    p_next = p + dt * v
    v_next = np.empty_like(v)
    v_next[0] = v_head_next
    v_next[1:] = v[1:] + dt * acc
    return p_next, v_next, acc


def integrate_platoon(p_init, v_init, v_head, cav_mask, cav_accel, noise,
                      alpha, beta, s_st, s_go, v_max, dt):
    steps, n = cav_accel.shape
    P = np.empty((steps + 1, n + 1))
    V = np.empty((steps + 1, n + 1))
    A = np.empty((steps, n))
    P[0], V[0] = p_init, v_init
    for k in range(steps):
        P[k + 1], V[k + 1], A[k] = platoon_step(
            P[k], V[k], v_head[k + 1], cav_mask, cav_accel[k], noise[k],
            alpha, beta, s_st, s_go, v_max, dt)
    return P, V, A


def hankel(w, depth):
    T, q = w.shape
    # windows: (cols, q, depth) -> rows ordered time-major, channel-minor
    win = sliding_window_view(w, depth, axis=0)
    return np.ascontiguousarray(win.transpose(2, 1, 0).reshape(depth * q, T - depth + 1))


def page(w, depth):
    T, q = w.shape
    cols = T // depth
    blocks = w[: cols * depth].reshape(cols, depth * q)
    return np.ascontiguousarray(blocks.T)
