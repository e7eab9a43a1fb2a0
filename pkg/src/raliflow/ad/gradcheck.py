"""Finite-difference verification of reverse-mode gradients."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFinite
from . import tensor as T
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    tol: float
    skipped_coords: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


class _KinkRecorder(list):
    pass


def _eval_with_kinks(f, tensors):
    """Run f, returning (scalar value, nearest kink distance seen)."""
    rec = _KinkRecorder()
    T._kink_recorders.append(rec)
    try:
        out = f(*tensors)
    finally:
        T._kink_recorders.pop()
    val = out.item()
    if not np.isfinite(val):
        raise NonFinite("function produced a non-finite value")
    return val, (min(rec) if rec else np.inf)


def grad_check(f, tensors, h: float = 1e-6, tol: float = 1e-4,
               max_coords: int = 50, seed: int = 0) -> GradCheckReport:
    """Compare backward() gradients of scalar-valued f against central differences.

    f takes the given tensors (all requires_grad) and returns a scalar Tensor.
    Up to max_coords coordinates per tensor are probed, chosen by a seeded
    permutation so runs are reproducible.  A coordinate is skipped (not
    failed) when either probe passes within 10*h of a relu/norm kink, where
    the two-sided difference quotient is meaningless.

    Relative error uses max(|analytic|, |numeric|, 1e-4) as denominator: the
    floor keeps sub-roundoff components from dominating the report.
    """
    for t in tensors:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.zero_grad()
    out = f(*tensors)
    if not np.isfinite(out.item()):
        raise NonFinite("function produced a non-finite value")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    checked = 0
    skipped = []
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        n = flat.size
        coords = rng.permutation(n)[:max_coords] if n > max_coords else np.arange(n)
        for ci in coords:
            orig = flat[ci]
            flat[ci] = orig + h
            f_plus, kink_plus = _eval_with_kinks(f, tensors)
            flat[ci] = orig - h
            f_minus, kink_minus = _eval_with_kinks(f, tensors)
            flat[ci] = orig
            if min(kink_plus, kink_minus) < 10.0 * h:
                skipped.append((ti, int(ci)))
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[ti].reshape(-1)[ci]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            max_rel = max(max_rel, rel)
            checked += 1
    return GradCheckReport(max_rel_error=max_rel, checked=checked,
                           skipped=len(skipped), tol=tol, skipped_coords=skipped)
