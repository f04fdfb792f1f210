"""Hankel/Page data matrices, past/future partitions and excitation checks."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from ._backend import kernels
from .errors import DepthExceedsLength, InsufficientData

RANK_RTOL = 1e-8


class MatrixKind(str, Enum):
    HANKEL = "hankel"
    PAGE = "page"


def as_series(values) -> np.ndarray:
    """Coerce a scalar or vector time series to a C-contiguous ``(T, q)`` array."""
    w = np.asarray(values, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise ValueError(f"series must be (T,) or (T, q) with T, q >= 1, got {w.shape}")
    return np.ascontiguousarray(w)


def hankel(series, depth: int) -> np.ndarray:
    w = as_series(series)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > w.shape[0]:
        raise DepthExceedsLength(f"depth {depth} exceeds series length {w.shape[0]}")
    return kernels.hankel(w, int(depth))


def page(series, depth: int) -> np.ndarray:
    w = as_series(series)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > w.shape[0]:
        raise DepthExceedsLength(f"depth {depth} exceeds series length {w.shape[0]}")
    return kernels.page(w, int(depth))


def data_matrix(kind, series, depth: int) -> np.ndarray:
    return hankel(series, depth) if MatrixKind(kind) is MatrixKind.HANKEL else page(series, depth)


def column_count(kind, T: int, depth: int) -> int:
    if MatrixKind(kind) is MatrixKind.HANKEL:
        return T - depth + 1
    return T // depth


def samples_for_columns(kind, cols: int, T_ini: int, N: int) -> int:
    """Smallest series length giving ``cols`` columns at depth ``T_ini + N``."""
    L = T_ini + N
    if MatrixKind(kind) is MatrixKind.HANKEL:
        return cols + L - 1
    return cols * L


@dataclass(frozen=True)
class BlockMatrixSet:
    kind: MatrixKind
    U_p: np.ndarray
    U_f: np.ndarray
    E_p: np.ndarray
    E_f: np.ndarray
    Y_p: np.ndarray
    Y_f: np.ndarray
    t_ini: int
    horizon: int

    @property
    def cols(self) -> int:
        return self.U_p.shape[1]

    @property
    def m(self) -> int:
        return self.U_p.shape[0] // self.t_ini

    @property
    def p(self) -> int:
        return self.Y_p.shape[0] // self.t_ini

    def stacked(self) -> np.ndarray:
        """``[U_p; E_p; Y_p; U_f; E_f; Y_f]``."""
        return np.vstack([self.U_p, self.E_p, self.Y_p, self.U_f, self.E_f, self.Y_f])

    def map_columns(self, V: np.ndarray) -> "BlockMatrixSet":
        """Re-parametrize the column space: every block ``X`` becomes ``X @ V``."""
        return BlockMatrixSet(self.kind, self.U_p @ V, self.U_f @ V, self.E_p @ V,
                              self.E_f @ V, self.Y_p @ V, self.Y_f @ V, self.t_ini, self.horizon)


def partition(kind, u_series, eps_series, y_series, T_ini: int, N: int) -> BlockMatrixSet:
    kind = MatrixKind(kind)
    u, e, y = as_series(u_series), as_series(eps_series), as_series(y_series)
    T = u.shape[0]
    if e.shape[0] != T or y.shape[0] != T:
        raise ValueError("u, eps and y series must share their length")
    L = T_ini + N
    if column_count(kind, T, L) < 1:
        raise InsufficientData(f"{T} samples give no {kind.value} column of depth {L}")
    blocks = []
    for w in (u, e, y):
        M = data_matrix(kind, w, L)
        q = w.shape[1]
        blocks.append((M[: q * T_ini], M[q * T_ini:]))
    (U_p, U_f), (E_p, E_f), (Y_p, Y_f) = blocks
    return BlockMatrixSet(kind, U_p, U_f, E_p, E_f, Y_p, Y_f, T_ini, N)


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True)
class ExcitationCertificate:
    exciting: bool
    rank: int
    required: int
    discarded: int = 0

    def summary(self) -> str:
        verdict = "exciting" if self.exciting else "NOT exciting"
        return f"{verdict}: rank {self.rank} / required {self.required}, discarded {self.discarded}"


def is_hankel_exciting(series, order: int, rtol: float = RANK_RTOL) -> ExcitationCertificate:
    if order < 1:
        raise ValueError("order must be >= 1")
    w = as_series(series)
    required = w.shape[1] * order
    if order > w.shape[0]:
        return ExcitationCertificate(False, 0, required)
    rank = numerical_rank(hankel(w, order), rtol)
    return ExcitationCertificate(rank == required, rank, required)


def stacked_page(series, depth: int, order: int) -> np.ndarray:
    """Vertical stack of the ``order`` shifted Page matrices of the given depth.

    Block r (0-based) is the Page matrix of ``w[r*depth : T - (order-1-r)*depth]``.
    """
    w = as_series(series)
    T = w.shape[0]
    mats = []
    for r in range(order):
        seg = w[r * depth: T - (order - 1 - r) * depth]
        if seg.shape[0] < depth:
            raise InsufficientData(f"shifted Page block {r} has no columns")
        mats.append(page(seg, depth))
    cols = min(M.shape[1] for M in mats)
    return np.vstack([M[:, :cols] for M in mats])


def is_page_exciting(series, depth: int, order: int,
                     rtol: float = RANK_RTOL) -> ExcitationCertificate:
    if order < 1 or depth < 1:
        raise ValueError("depth and order must be >= 1")
    w = as_series(series)
    S = stacked_page(w, depth, order)
    required = w.shape[1] * depth * order
    # every shifted segment has length T - (order-1)*depth
    discarded = (w.shape[0] - (order - 1) * depth) % depth
    rank = numerical_rank(S, rtol)
    return ExcitationCertificate(rank == required, rank, required, discarded)


def min_samples(kind, m: int, n: int, T_ini: int, N: int, masked: bool = False) -> int:
    """Minimum data length for the excitation conditions.

    ``masked`` raises the excitation order by one, as needed when the
    representation carries the extra all-ones row.
    """
    if min(m, n, T_ini, N) < 1:
        raise ValueError("all arguments must be >= 1")
    L = T_ini + N
    extra = 1 if masked else 0
    if MatrixKind(kind) is MatrixKind.HANKEL:
        return (m + 2) * (L + 2 * n + extra) - 1
    return L * (((m + 1) * L + 1) * (2 * n + 1 + extra) - 1)


def excitation_order(kind, n: int, T_ini: int, N: int, masked: bool = False) -> int:
    """Order the combined input must be exciting of (Hankel: depth; Page: block count)."""
    extra = 1 if masked else 0
    if MatrixKind(kind) is MatrixKind.HANKEL:
        return T_ini + N + 2 * n + extra
    return 2 * n + 1 + extra


def write_series_csv(path, named_series: dict, dt: float = 1.0, comment: str | None = None):
    """Write series side by side; header ``t,<name>_1..<name>_q`` per series."""
    arrays = {name: as_series(v) for name, v in named_series.items()}
    T = {a.shape[0] for a in arrays.values()}
    if len(T) != 1:
        raise ValueError("series lengths differ")
    T = T.pop()
    header = ["t"]
    for name, a in arrays.items():
        header += [f"{name}_{j + 1}" for j in range(a.shape[1])]
    body = np.column_stack([np.arange(T) * dt] + list(arrays.values()))
    with open(Path(path), "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in body:
            w.writerow([repr(float(x)) for x in row])


def read_series_csv(path) -> tuple[np.ndarray, dict]:
    """Inverse of ``write_series_csv``; returns the time column and a name -> (T, q) dict."""
    with open(Path(path), newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    if data.ndim == 1:
        data = data.reshape(0, len(header))
    out: dict[str, list[int]] = {}
    for j, col in enumerate(header[1:], start=1):
        name = col.rsplit("_", 1)[0]
        out.setdefault(name, []).append(j)
    return data[:, 0], {name: data[:, idx] for name, idx in out.items()}
