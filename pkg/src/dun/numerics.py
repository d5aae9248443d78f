"""Stable reductions, parameter bundles, and finite-difference gradient checks.

All arithmetic is 64-bit. Matrices are plain row-major float64 numpy arrays;
`require_matrix` enforces the shape/finiteness contract at module boundaries.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


def require_matrix(a: np.ndarray, name: str = "matrix", cols: int | None = None) -> np.ndarray:
    """Validate a 2-D float64 array with finite entries; returns it unchanged."""
    if a.ndim != 2:
        raise ValueError(f"{name}: expected 2-D array, got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        raise ValueError(f"{name}: expected float array, got {a.dtype}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"{name}: expected {cols} columns, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    return a


def logsumexp(terms: np.ndarray) -> float:
    """log sum exp of a 1-D array, stable under large magnitudes.

    Entries may be finite or -inf. An all-(-inf) input returns -inf exactly.
    """
    t = np.asarray(terms, dtype=np.float64)
    if t.size == 0:
        raise ValueError("empty reduction")
    m = np.max(t)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(t - m))))


class Param:
    """One named tensor with its gradient buffer.

    `decay` marks weight-decay eligibility; `frozen` excludes the tensor from
    optimization and gradient checks. `value` is shared with the owning model,
    so updates must be in place.
    """

    __slots__ = ("name", "value", "grad", "decay", "frozen")

    def __init__(self, name: str, value: np.ndarray, decay: bool = True, frozen: bool = False):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.decay = decay
        self.frozen = frozen
        if self.grad.shape != self.value.shape:
            raise ValueError(f"{name}: gradient shape mismatch")


class ParamBundle:
    """Ordered collection of parameters with mirrored gradients."""

    def __init__(self, params: Iterable[Param]):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def __getitem__(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def zero_grads(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0


def grad_check(loss_and_grads: Callable[[], float], bundle: ParamBundle, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_and_grads` must be a pure function of the bundle's current values: it
    returns the scalar loss and leaves analytic gradients in the bundle. Frozen
    parameters are skipped and contribute zero error.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    bundle.zero_grads()
    loss0 = loss_and_grads()
    if not np.isfinite(loss0):
        raise ValueError("loss not finite")
    analytic = {p.name: p.grad.copy() for p in bundle}

    worst = 0.0
    for p in bundle:
        if p.frozen:
            continue
        flat = p.value.reshape(-1)
        aflat = analytic[p.name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            bundle.zero_grads()
            lo_hi = loss_and_grads()
            flat[k] = orig - eps
            bundle.zero_grads()
            lo_lo = loss_and_grads()
            flat[k] = orig
            fd = (lo_hi - lo_lo) / (2.0 * eps)
            rel = abs(aflat[k] - fd) / (abs(fd) + 1e-8)
            if rel > worst:
                worst = rel
    # restore analytic grads for callers that inspect them afterwards
    bundle.zero_grads()
    loss_and_grads()
    return worst
