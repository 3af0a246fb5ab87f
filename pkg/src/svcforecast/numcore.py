"""Dense float64 matrix helpers and a finite-difference gradient oracle.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
functions here add the shape checking and error reporting the rest of the
package relies on; hot loops elsewhere use ``@`` directly once shapes have
been validated.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, EvaluationError

ACTIVATIONS = ("sigmoid", "tanh", "relu", "identity")


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: no overflow for large |x| and exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def activate(x: np.ndarray, fn: str) -> np.ndarray:
    if fn == "sigmoid":
        return sigmoid(x)
    if fn == "tanh":
        return np.tanh(x)
    if fn == "relu":
        return relu(x)
    if fn == "identity":
        return np.asarray(x, dtype=np.float64).copy()
    raise ValueError(f"unknown activation {fn!r}; expected one of {ACTIVATIONS}")


def activation_grad(pre: np.ndarray, post: np.ndarray, fn: str) -> np.ndarray:
    """Derivative of ``fn`` at ``pre`` given ``post = fn(pre)``."""
    if fn == "sigmoid":
        return post * (1.0 - post)
    if fn == "tanh":
        return 1.0 - post * post
    if fn == "relu":
        return (pre > 0).astype(np.float64)
    if fn == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {fn!r}; expected one of {ACTIVATIONS}")


def elementwise(m: np.ndarray, fn: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("elementwise input contains non-finite entries")
    return activate(m, fn)


def finite_diff_gradient(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    epsilon: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``params``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.zeros_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + epsilon
        up = loss_fn(p.copy())
        p[i] = orig - epsilon
        down = loss_fn(p.copy())
        p[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise EvaluationError(f"non-finite loss while perturbing coordinate {i}")
        # difference before rounding so an extended-precision loss keeps its extra digits
        grad[i] = float((up - down) / (2.0 * epsilon))
    return grad
