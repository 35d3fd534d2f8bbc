"""Dense numeric helpers: prefix cosine, stable log-sum-exp, centering and a
central-difference gradient oracle.

Matrices and vectors are plain ``numpy`` float64 arrays. The 32-bit
little-endian view is only used at the persistence boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError, NumericError

F32LE = np.dtype("<f4")

# Relative-error tolerance and the absolute floor used when the reference
# gradient component is itself tiny.
GRAD_RTOL = 1e-4
GRAD_ATOL_FLOOR = 1e-7
FD_EPS = 1e-5
RICHARDSON_EPS = 1e-3


def as_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} has non-finite entries")
    return arr


def as_matrix(x, name: str = "X") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} has non-finite entries")
    return arr


def to_storage(x: np.ndarray) -> bytes:
    """Serialize an array as row-major 32-bit little-endian floats."""
    return np.ascontiguousarray(x, dtype=F32LE).tobytes()


def from_storage(buf: bytes, shape: Sequence[int]) -> np.ndarray:
    return np.frombuffer(buf, dtype=F32LE).reshape(tuple(shape)).astype(np.float64)


def _check_level(m: int, dim: int) -> None:
    if not 1 <= m <= dim:
        raise DimensionError(f"truncation level m={m} outside [1, {dim}]")


def prefix_cosine(x, y, m: int) -> float:
    """Cosine similarity of the first ``m`` coordinates of ``x`` and ``y``."""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    _check_level(m, min(x.size, y.size))
    xm, ym = x[:m], y[:m]
    nx, ny = np.linalg.norm(xm), np.linalg.norm(ym)
    if nx == 0.0 or ny == 0.0:
        raise DegenerateInputError(f"zero-norm prefix at m={m}")
    return float(np.clip(xm @ ym / (nx * ny), -1.0, 1.0))


def prefix_cosine_grad(x, y, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`prefix_cosine` with respect to both arguments."""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    _check_level(m, min(x.size, y.size))
    xm, ym = x[:m], y[:m]
    nx, ny = np.linalg.norm(xm), np.linalg.norm(ym)
    if nx == 0.0 or ny == 0.0:
        raise DegenerateInputError(f"zero-norm prefix at m={m}")
    xn, yn = xm / nx, ym / ny
    c = xn @ yn
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    gx[:m] = (yn - c * xn) / nx
    gy[:m] = (xn - c * yn) / ny
    return gx, gy


def normalize_rows(X: np.ndarray, m: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize the ``m``-prefix of each row; returns (unit rows, norms)."""
    Xm = X if m is None else X[..., :m]
    norms = np.linalg.norm(Xm, axis=-1)
    if np.any(norms == 0.0):
        bad = np.argwhere(norms == 0.0)[0]
        raise DegenerateInputError(f"zero-norm prefix at row {tuple(int(i) for i in bad)}, m={Xm.shape[-1]}")
    return Xm / norms[..., None], norms


def normalize_rows_backward(dU: np.ndarray, U: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Backprop through ``U = X / ||X||`` row-wise."""
    proj = np.sum(dU * U, axis=-1, keepdims=True)
    return (dU - proj * U) / norms[..., None]


def log_sum_exp(scores) -> float:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    if not np.all(np.isfinite(s)):
        raise NumericError("log_sum_exp requires finite scores")
    top = s.max()
    return float(top + np.log(np.sum(np.exp(s - top))))


def log_sum_exp_masked(S: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp over masked entries; returns (lse, softmax)."""
    neg = np.where(mask, S, -np.inf)
    top = neg.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(neg - top), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    return (top + np.log(z))[..., 0], e / z


def softmax(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


def center_rows(X) -> np.ndarray:
    """Subtract the column means: ``X - (1/B) 1 1^T X``."""
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise DimensionError("center_rows needs at least one row")
    return X - X.mean(axis=0, keepdims=True)


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x,
    eps: float = FD_EPS,
    coords: Sequence[int] | None = None,
    richardson: bool = False,
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` may have any shape; coordinates index its flattened view. When
    ``coords`` is given only those entries are estimated and the rest are 0.

    With ``richardson=True`` the estimate is ``(4 D(eps/2) - D(eps)) / 3`` for
    central differences ``D``, which cancels the second-order truncation term
    and so tolerates a larger ``eps`` (less rounding noise). Use it with
    ``eps`` around ``RICHARDSON_EPS``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords

    def central(i: int, h: float) -> float:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        return (fp - fm) / (2.0 * h)

    for i in idx:
        if richardson:
            grad[i] = (4.0 * central(i, eps / 2) - central(i, eps)) / 3.0
        else:
            grad[i] = central(i, eps)
    return grad.reshape(x.shape)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst_index: int
    passed: bool
    n_checked: int = 0
    worst_name: str = ""
    n_skipped: int = 0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = self.worst_name or str(self.worst_index)
        skipped = f" skipped={self.n_skipped}" if self.n_skipped else ""
        return (
            f"gradcheck {status}: max_rel={self.max_rel_error:.3e} "
            f"max_abs={self.max_abs_error:.3e} worst={where} n={self.n_checked}{skipped}"
        )


def compare_gradients(
    analytic,
    numeric,
    rtol: float = GRAD_RTOL,
    atol_floor: float = GRAD_ATOL_FLOOR,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Score analytic against numeric gradient entries.

    A component whose reference magnitude is below ``atol_floor`` is judged by
    absolute error against that floor instead of relative error.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.shape != n.shape:
        raise DimensionError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    if a.size == 0:
        return GradCheckReport(0.0, 0.0, -1, True, 0)
    abs_err = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    rel = np.where(scale > 0, abs_err / np.where(scale > 0, scale, 1.0), 0.0)
    tiny = (np.abs(n) < atol_floor) & (abs_err <= atol_floor)
    rel = np.where(tiny, 0.0, rel)
    worst = int(np.argmax(rel))
    max_rel = float(rel[worst])
    return GradCheckReport(
        max_rel_error=max_rel,
        max_abs_error=float(abs_err.max()),
        worst_index=worst,
        passed=max_rel <= rtol,
        n_checked=int(a.size),
        worst_name=names[worst] if names is not None else "",
    )


def check_gradient(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x,
    eps: float = FD_EPS,
    rtol: float = GRAD_RTOL,
    coords: Sequence[int] | None = None,
    richardson: bool = False,
) -> GradCheckReport:
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(grad(x), dtype=np.float64).reshape(-1)
    numeric = finite_diff_grad(f, x, eps, coords, richardson).reshape(-1)
    if coords is not None:
        coords = np.asarray(coords)
        analytic, numeric = analytic[coords], numeric[coords]
    return compare_gradients(analytic, numeric, rtol)
