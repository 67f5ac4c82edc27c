"""Central finite-difference verification of analytic backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ToleranceExceeded

# gradients smaller than this are compared in absolute terms
ABS_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get)


def _rel_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), ABS_FLOOR)


def _entries(size, max_entries, rng):
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return rng.choice(size, size=max_entries, replace=False)


def gradient_check(fragment, inputs, tol=1e-4, h=1e-5, rng=None, max_entries=None, check_inputs=True,
                   raise_on_fail=True) -> GradCheckReport:
    """Compare ``fragment.backward`` against central differences.

    ``fragment`` exposes ``forward(*inputs)``, ``backward(dout)`` (returning
    one input gradient or a tuple of them) and ``parameters()``.  The scalar
    probed is ``sum(forward(*inputs) * R)`` for a fixed random ``R``, so every
    output element contributes.  ``max_entries`` caps how many entries per
    tensor are perturbed (picked at random) to keep big layers cheap.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inputs = tuple(inputs) if isinstance(inputs, (tuple, list)) else (inputs,)
    inputs = tuple(np.array(x, dtype=np.float64) for x in inputs)
    params = fragment.parameters()

    out = fragment.forward(*inputs)
    proj = rng.standard_normal(out.shape) / np.sqrt(out.size)

    def loss():
        return float((fragment.forward(*inputs) * proj).sum())

    for p in params.values():
        p.zero_grad()
    fragment.forward(*inputs)
    dinputs = fragment.backward(proj)
    if not isinstance(dinputs, tuple):
        dinputs = (dinputs,)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    targets = {name: p.value for name, p in params.items()}
    if check_inputs:
        for k, (x, dx) in enumerate(zip(inputs, dinputs)):
            analytic[f"input{k}"] = dx
            targets[f"input{k}"] = x

    errors = {}
    for name, arr in targets.items():
        flat = arr.reshape(-1)
        grad = analytic[name].reshape(-1)
        worst = 0.0
        for idx in _entries(flat.size, max_entries, rng):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = loss()
            flat[idx] = orig - h
            minus = loss()
            flat[idx] = orig
            numeric = (plus - minus) / (2 * h)
            worst = max(worst, float(_rel_error(grad[idx], numeric)))
        errors[name] = worst

    report = GradCheckReport(max(errors.values(), default=0.0), errors)
    if raise_on_fail and report.max_rel_error >= tol:
        raise ToleranceExceeded(
            f"parameter {report.worst!r}: relative error {report.errors[report.worst]:.3e} >= {tol:g}"
        )
    return report
