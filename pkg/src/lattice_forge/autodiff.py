"""Minimal reverse-mode tape over numpy arrays.

Operations executed on tape-bound ``Var`` objects are appended to the tape in
execution order, so walking the record backwards is a valid topological order.
Vars without a tape are constants: ops on them record nothing, which doubles as
a no-grad inference path.
"""

from __future__ import annotations

import ctypes
import ctypes.util
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717


_ALLOCATOR_TUNED = False


def tune_allocator(threshold: int = 1 << 30) -> bool:
    """Keep freed temporaries in the glibc heap instead of returning them to the OS.

    Training allocates and frees the same few-MB arrays thousands of times per
    epoch; with the default thresholds every one of them is a fresh mmap and
    page-faults back in. No-op on non-glibc platforms.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        M_TRIM_THRESHOLD, M_TOP_PAD, M_MMAP_THRESHOLD = -1, -2, -3
        ok = all(libc.mallopt(opt, val) == 1 for opt, val in (
            (M_MMAP_THRESHOLD, threshold), (M_TRIM_THRESHOLD, threshold), (M_TOP_PAD, 64 << 20)))
    except (OSError, AttributeError):
        ok = False
    _ALLOCATOR_TUNED = ok
    return ok


class Var:
    __slots__ = ("value", "grad", "tape")

    def __init__(self, value, tape: "Tape | None" = None):
        self.value = value
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={np.shape(self.value)}, tracked={self.tape is not None})"


class Tape:
    def __init__(self):
        self._record: list[tuple[Var, Callable[[np.ndarray], None]]] = []

    def param(self, value: np.ndarray) -> Var:
        return Var(value, self)

    def record(self, out: Var, backward: Callable[[np.ndarray], None]) -> None:
        self._record.append((out, backward))

    def __len__(self):
        return len(self._record)

    def backward(self, out: Var) -> None:
        """Accumulate gradients into every tracked Var, then drop the record.

        Dropping the closures breaks the Var <-> Tape cycles so intermediate
        arrays are freed immediately instead of waiting for the cyclic GC.
        """
        out.grad = np.ones_like(out.value)
        for node, fn in reversed(self._record):
            if node.grad is not None:
                fn(node.grad)
        self._record.clear()


def const(value) -> Var:
    return Var(np.asarray(value, dtype=float))


def _tape_of(*vs: Var) -> Tape | None:
    for v in vs:
        if v.tape is not None:
            return v.tape
    return None


def _accum(v: Var, g: np.ndarray) -> None:
    if v.tape is None:
        return
    v.grad = g if v.grad is None else v.grad + g


def linear(x: Var, W: Var, b: Var | None = None) -> Var:
    """x @ W.T + b with W shaped (out, in)."""
    val = x.value @ W.value.T
    if b is not None:
        val += b.value
    tape = _tape_of(x, W) if b is None else _tape_of(x, W, b)
    out = Var(val, tape)
    if tape is not None:
        def back(g):
            if x.tape is not None:
                _accum(x, g @ W.value)
            if W.tape is not None:
                _accum(W, g.T @ x.value)
            if b is not None and b.tape is not None:
                _accum(b, col_sum(g))
        tape.record(out, back)
    return out


def col_sum(g: np.ndarray) -> np.ndarray:
    # a vector product is several times faster than sum(axis=0) on tall arrays
    return np.ones(g.shape[0]) @ g


def add(*vs: Var) -> Var:
    val = vs[0].value
    for v in vs[1:]:
        val = val + v.value
    tape = _tape_of(*vs)
    out = Var(val, tape)
    if tape is not None:
        def back(g):
            for v in vs:
                _accum(v, _unbroadcast(g, v.value.shape))
        tape.record(out, back)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def selu(x: Var) -> Var:
    v = x.value
    m = np.minimum(v, 0.0)
    e = np.exp(m)
    # lambda * max(v, 0) + lambda * alpha * (exp(min(v, 0)) - 1)
    val = v - m
    val *= SELU_LAMBDA
    val += SELU_LAMBDA * SELU_ALPHA * (e - 1.0)
    out = Var(val, x.tape)
    if x.tape is not None:
        def back(g):
            d = (v > 0) * (SELU_LAMBDA - SELU_LAMBDA * SELU_ALPHA)
            d += SELU_LAMBDA * SELU_ALPHA * e
            d *= g
            _accum(x, d)
        x.tape.record(out, back)
    return out


def prelu(x: Var, a: Var) -> Var:
    """x if x > 0 else a * x, with one slope per column."""
    v = x.value
    neg = np.minimum(v, 0.0)
    val = v + (a.value - 1.0) * neg
    tape = _tape_of(x, a)
    out = Var(val, tape)
    if tape is not None:
        def back(g):
            if x.tape is not None:
                _accum(x, g + (a.value - 1.0) * ((v <= 0) * g))
            if a.tape is not None:
                _accum(a, col_sum(g * neg))
        tape.record(out, back)
    return out


def columns(W: Var, start: int, stop: int) -> Var:
    """Column block W[:, start:stop]."""
    out = Var(W.value[:, start:stop], W.tape)
    if W.tape is not None:
        def back(g):
            full = np.zeros_like(W.value)
            full[:, start:stop] = g
            _accum(W, full)
        W.tape.record(out, back)
    return out


def identity(x: Var) -> Var:
    return x


def concat(vs: Sequence[Var], axis: int = 1) -> Var:
    val = np.concatenate([v.value for v in vs], axis=axis)
    tape = _tape_of(*vs)
    out = Var(val, tape)
    if tape is not None:
        splits = np.cumsum([v.value.shape[axis] for v in vs])[:-1]
        def back(g):
            for v, part in zip(vs, np.split(g, splits, axis=axis)):
                _accum(v, part)
        tape.record(out, back)
    return out


def spmm(S, x: Var, St=None) -> Var:
    """Constant (sparse or dense) matrix times a Var: gathers, scatters, pooling.

    ``St`` optionally supplies S.T in a row-major format for a faster backward.
    """
    val = S @ x.value
    out = Var(np.asarray(val), x.tape)
    if x.tape is not None:
        T = S.T if St is None else St
        def back(g):
            _accum(x, np.asarray(T @ g))
        x.tape.record(out, back)
    return out


def gather(x: Var, index: np.ndarray, scatter=None) -> Var:
    """Rows x[index]; ``scatter`` is the (n_rows, len(index)) adjoint, built if absent."""
    out = Var(np.take(x.value, index, axis=0), x.tape)
    if x.tape is not None:
        T = scatter if scatter is not None else gather_matrix(index, x.value.shape[0]).T.tocsr()
        def back(g):
            _accum(x, T @ g)
        x.tape.record(out, back)
    return out


def mse(pred: Var, target: np.ndarray) -> Var:
    diff = pred.value.reshape(-1) - np.asarray(target, dtype=float).reshape(-1)
    out = Var(np.array(np.mean(diff**2)), pred.tape)
    if pred.tape is not None:
        n = diff.size
        def back(g):
            _accum(pred, (2.0 * g / n * diff).reshape(pred.value.shape))
        pred.tape.record(out, back)
    return out


def gather_matrix(index: np.ndarray, n_cols: int) -> sp.csr_matrix:
    """One-hot (len(index), n_cols) matrix so that G @ x == x[index]."""
    index = np.asarray(index, dtype=np.int64)
    m = len(index)
    return sp.csr_matrix((np.ones(m), index, np.arange(m + 1)), shape=(m, n_cols))


def segment_mean_matrix(segment: np.ndarray, n_segments: int) -> sp.csr_matrix:
    """(n_segments, len(segment)) averaging matrix; empty segments give zero rows."""
    segment = np.asarray(segment, dtype=np.int64)
    counts = np.bincount(segment, minlength=n_segments).astype(float)
    w = 1.0 / counts[segment]
    M = sp.csr_matrix((w, (segment, np.arange(len(segment)))), shape=(n_segments, len(segment)))
    return M
