"""Input validation helpers shared by instances and estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .core import StrideError

SIMPLEX_TOL = 1e-9


def check_transition_tensor(P, S: int, A: int) -> np.ndarray:
    P = check_array(np.asarray(P, dtype=float), ensure_2d=False, allow_nd=True)
    if P.shape != (S, A, S):
        raise StrideError(f"P has shape {P.shape}, expected {(S, A, S)}", code="invalid-instance")
    if (P < 0).any() or np.abs(P.sum(axis=-1) - 1.0).max() > SIMPLEX_TOL:
        raise StrideError("every P[s, a, :] must be a probability vector", code="invalid-instance")
    return P


def check_reward_matrix(R, S: int, A: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    R = check_array(np.asarray(R, dtype=float), ensure_2d=True)
    if R.shape != (S, A):
        raise StrideError(f"R has shape {R.shape}, expected {(S, A)}", code="invalid-instance")
    if (R < low).any() or (R > high).any():
        raise StrideError(f"rewards must lie in [{low}, {high}]", code="invalid-instance")
    return R


def check_mdp_arrays(P, R, S: int, A: int) -> tuple[np.ndarray, np.ndarray]:
    if S < 1 or A < 1:
        raise StrideError("S and A must be >= 1", code="invalid-instance")
    return check_transition_tensor(P, S, A), check_reward_matrix(R, S, A)


def check_policy(pi, H: int, S: int, A: int) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (H, S) or not np.issubdtype(pi.dtype, np.integer):
        raise StrideError(f"policy must be an integer table of shape {(H, S)}", code="invalid-policy")
    if (pi < 0).any() or (pi >= A).any():
        raise StrideError("policy action out of range", code="invalid-policy")
    return pi.astype(np.int64)


def check_discount(name: str, value: float, *, closed: bool = False) -> float:
    value = float(value)
    ok = (0.0 <= value <= 1.0) if closed else (0.0 < value < 1.0)
    if not ok:
        raise StrideError(f"{name}={value} outside {'[0, 1]' if closed else '(0, 1)'}",
                          code="invalid-instance")
    return value
