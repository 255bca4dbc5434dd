"""Differentiable building blocks: parameters, linear maps, LSTM cell,
softmax, and a finite-difference gradient checker.

Matrices are plain 2-D float64 numpy arrays in row-major order; vectors are
1-D.  All analytic gradients in the package are verified against central
finite differences through :func:`gradcheck`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import ArgumentError, DeterminismError, DimensionError


@dataclass
class ParamTensor:
    """A learnable tensor paired with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape} for {self.name}"
            )

    def zero_grad(self):
        self.grad[...] = 0.0

    @property
    def size(self):
        return self.value.size


def uniform_init(rng, rows, cols):
    """Weight init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], fan_in = cols."""
    limit = 1.0 / np.sqrt(cols)
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class LstmCellParams:
    """Stacked-gate LSTM parameters.

    ``wx`` is (4*hidden, input), ``wh`` is (4*hidden, hidden), ``b`` is
    (4*hidden,).  Gate block order: input, forget, output, candidate.
    """

    wx: ParamTensor
    wh: ParamTensor
    b: ParamTensor
    n_in: int
    n_hidden: int

    @classmethod
    def create(cls, rng, n_in, n_hidden, prefix="enc"):
        wx = ParamTensor(prefix + ".wx", uniform_init(rng, 4 * n_hidden, n_in))
        wh = ParamTensor(prefix + ".wh", uniform_init(rng, 4 * n_hidden, n_hidden))
        b_val = np.zeros(4 * n_hidden)
        b_val[n_hidden:2 * n_hidden] = 1.0  # forget-gate bias offset
        b = ParamTensor(prefix + ".b", b_val)
        return cls(wx=wx, wh=wh, b=b, n_in=n_in, n_hidden=n_hidden)

    def tensors(self):
        return [self.wx, self.wh, self.b]


def linear_forward(w, b, x):
    """w @ x + b with explicit shape validation."""
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 1:
        raise DimensionError(f"expected matrix and vector, got shapes {w.shape} and {x.shape}")
    if w.shape[1] != x.shape[0]:
        raise DimensionError(f"matrix {w.shape} cannot multiply vector {x.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"bias {b.shape} does not match matrix {w.shape}")
    return np.dot(w, x) + b


def lstm_cell(params, x, h_prev, c_prev):
    """One step of the standard LSTM recurrence; returns (h, c)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    h_prev = np.ascontiguousarray(h_prev, dtype=np.float64)
    c_prev = np.ascontiguousarray(c_prev, dtype=np.float64)
    if x.shape != (params.n_in,):
        raise DimensionError(f"input width {x.shape} != expected ({params.n_in},)")
    if h_prev.shape != (params.n_hidden,) or c_prev.shape != (params.n_hidden,):
        raise DimensionError(
            f"state widths {h_prev.shape}/{c_prev.shape} != expected ({params.n_hidden},)"
        )
    h, c, _, _, _, _ = _kernels.lstm_forward(
        x, h_prev, c_prev, params.wx.value, params.wh.value, params.b.value
    )
    return h, c


def softmax(v):
    """Numerically stable softmax; entries positive and summing to 1."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ArgumentError("softmax of an empty vector")
    ex = np.exp(v - np.max(v))
    return ex / np.sum(ex)


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=np.float64)))


@dataclass
class GradCheckReport:
    """Per-tensor worst relative error between analytic and numeric gradients."""

    max_rel_err: dict
    tol: float
    failures: list  # (tensor name, flat index, analytic, numeric, rel err)

    @property
    def passed(self):
        return not self.failures

    @property
    def worst(self):
        if not self.max_rel_err:
            return ("", 0.0)
        name = max(self.max_rel_err, key=self.max_rel_err.get)
        return name, self.max_rel_err[name]

    def format(self):
        lines = []
        for name in sorted(self.max_rel_err):
            err = self.max_rel_err[name]
            status = "ok" if err < self.tol else "FAIL"
            lines.append(f"{status:4s} {name:24s} max_rel_err={err:.3e}")
        return "\n".join(lines)


def gradcheck(loss_fn, tensors, step=1e-5, tol=1e-4, rel_floor=1e-6, grad_tamper=None):
    """Compare analytic gradients with central finite differences.

    ``loss_fn(want_grad)`` must return the scalar loss and, when
    ``want_grad`` is true, accumulate gradients into the given tensors
    (which are zeroed here first).  The loss must be deterministic; this is
    verified by evaluating it twice.  ``grad_tamper``, used by the CLI's
    fault-injection self-test, mutates the analytic gradients before the
    comparison.
    """
    if step <= 0:
        raise ArgumentError("finite-difference step must be positive")
    base = float(loss_fn(False))
    again = float(loss_fn(False))
    if base != again:
        raise DeterminismError(
            f"loss function is not deterministic under a fixed seed ({base!r} != {again!r})"
        )
    for t in tensors:
        t.zero_grad()
    loss_fn(True)
    analytic = {t.name: t.grad.copy() for t in tensors}
    if grad_tamper is not None:
        grad_tamper(analytic)
    max_rel = {}
    failures = []
    for t in tensors:
        flat = t.value.reshape(-1)
        a_flat = analytic[t.name].reshape(-1)
        worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = float(loss_fn(False))
            flat[idx] = orig - step
            f_minus = float(loss_fn(False))
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(a_flat[idx]), abs(numeric), rel_floor)
            rel = abs(a_flat[idx] - numeric) / denom
            if rel > worst:
                worst = rel
            if rel > tol:
                failures.append((t.name, idx, a_flat[idx], numeric, rel))
        max_rel[t.name] = worst
    return GradCheckReport(max_rel_err=max_rel, tol=tol, failures=failures)
