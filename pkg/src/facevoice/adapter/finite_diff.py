"""Finite-difference verification of the analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from .._validation import ValidationError
from . import objective
from .model import PARAM_NAMES

TOLERANCE = 1e-4
ABS_FLOOR = 1e-7
STEP = 1e-5


def relative_error(analytic, numeric, abs_floor=ABS_FLOOR, tol=TOLERANCE):
    """``|a - f| / max(|a|, |f|, abs_floor / tol)``.

    A value ``<= tol`` means the coordinate agrees to relative ``tol`` or
    to absolute ``abs_floor``, whichever is looser.
    """
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), abs_floor / tol)


@dataclass
class BlockResult:
    name: str
    max_error: float
    worst_index: tuple
    n_coords: int
    passed: bool


@dataclass
class GradcheckReport:
    blocks: list
    loss: float
    mode: str
    step: float = STEP
    tolerance: float = TOLERANCE
    skipped: tuple = field(default_factory=tuple)

    @property
    def passed(self):
        return all(b.passed for b in self.blocks)

    @property
    def failed_blocks(self):
        return [b.name for b in self.blocks if not b.passed]

    @property
    def max_error(self):
        return max(b.max_error for b in self.blocks)

    def __getitem__(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def render(self):
        lines = [f"gradcheck mode={self.mode} step={self.step:g} tol={self.tolerance:g} loss={self.loss:.6g}"]
        for b in self.blocks:
            lines.append(f"{b.name:<10} {b.max_error:.3e} {'ok' if b.passed else 'FAIL'} ({b.n_coords} coords)")
        for name in self.skipped:
            lines.append(f"{name:<10} skipped")
        lines.append("PASS" if self.passed else "FAIL " + ",".join(self.failed_blocks))
        return "\n".join(lines) + "\n"


def preactivation_grads(model, V, eta, head, step=STEP):
    """Weight gradients from central differences of every pre-activation entry.

    Each layer is affine in its parameters, so ``dL/dW = dL/dA^T X``
    exactly; only ``dL/dA`` is differenced.  Far cheaper than perturbing
    each weight and equally sensitive to errors in the backward pass.
    """
    fw = objective.forward(model, V, eta)
    B = fw.v.shape[0]
    eye = np.eye(B)
    out = {}
    for w_name, b_name, X, base, tail in objective._block_stages(fw):
        n_out = base.shape[1]
        k = np.arange(n_out * B)
        rows, cols = k // B, k % B
        dA = objective._fd_coords(model, fw, head, eye, base, tail, rows, cols, step).reshape(n_out, B).T
        out[w_name] = dA.T @ X
        out[b_name] = dA.sum(axis=0)
    return {name: out[name] for name in PARAM_NAMES}


def check_gradients(model, V, eta, head, analytic=None, mode="full", step=STEP,
                    tolerance=TOLERANCE, abs_floor=ABS_FLOOR, skip=()):
    """Compare analytic and central-difference gradients block by block.

    ``analytic`` may replace the gradient routine (signature
    ``(model, V, eta, head) -> GradientBundle``), which is how mutation
    tests inject a broken backward pass.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or not 1 <= V.shape[0] <= 16:
        raise ValidationError("gradcheck expects a batch of 1 to 16 records")
    if analytic is None:
        bundle, _ = objective.value_and_grad(model, V, eta, head)
    else:
        bundle = analytic(model, V, eta, head)
    if mode == "full":
        numeric = objective.finite_difference_grads(model, V, eta, head, step=step)
    elif mode == "preactivation":
        numeric = preactivation_grads(model, V, eta, head, step=step)
    else:
        raise ValidationError(f"unknown gradcheck mode {mode!r}")
    blocks = []
    for name in PARAM_NAMES:
        if name in skip:
            continue
        err = relative_error(bundle.grads[name], numeric[name], abs_floor, tolerance)
        worst = np.unravel_index(int(np.argmax(err)), err.shape)
        blocks.append(BlockResult(name, float(err[worst]), tuple(int(i) for i in worst), err.size,
                                  bool(err[worst] <= tolerance)))
    return GradcheckReport(blocks, bundle.loss, mode, step, tolerance, tuple(skip))
