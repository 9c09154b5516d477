"""Central-difference checking of the hand-derived backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradReport:
    """Comparison of analytic gradients against central differences."""

    max_rel_error: float
    per_input: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def ok(self, tolerance: float) -> bool:
        return not self.failures and self.max_rel_error <= tolerance


def _rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(op, inputs, step: float = 1e-5, tolerance: float = 1e-4, seed: int = 0) -> GradReport:
    """Compare ``op``'s backward against central finite differences.

    ``op`` maps the given tensors to one tensor or a sequence of tensors;
    outputs are reduced to a scalar through a fixed random projection so a
    single backward pass covers every output element. Inputs must be
    float64 for the stated tolerances to be meaningful.
    """
    # fresh float64 copies: aliased caller arrays would couple perturbations
    inputs = [Tensor(np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64, copy=True),
                     requires_grad=True) for t in inputs]

    rng = np.random.default_rng(seed)
    projections = None

    def scalar_loss(track: bool):
        nonlocal projections
        outs = op(*inputs)
        if isinstance(outs, Tensor):
            outs = [outs]
        outs = list(outs)
        if projections is None:
            projections = [rng.standard_normal(o.shape) for o in outs]
        if track:
            total = None
            from .ops import mul, tsum  # local import to avoid a cycle
            for o, p in zip(outs, projections):
                term = tsum(mul(o, Tensor(p.astype(o.data.dtype))))
                total = term if total is None else _add(total, term)
            return total
        return sum(float((o.data * p).sum()) for o, p in zip(outs, projections))

    def _add(a, b):
        from .ops import add
        return add(a, b)

    loss = scalar_loss(track=True)
    loss.backward()

    report = GradReport(max_rel_error=0.0)
    with no_grad():
        for idx, t in enumerate(inputs):
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.isfinite(analytic).all():
                report.failures.append(f"input {idx}: non-finite analytic gradient")
                report.per_input.append(float("inf"))
                continue
            numeric = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            nflat = numeric.reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + step
                up = scalar_loss(track=False)
                flat[j] = keep - step
                down = scalar_loss(track=False)
                flat[j] = keep
                nflat[j] = (up - down) / (2.0 * step)
            err = _rel_error(analytic, numeric)
            report.per_input.append(err)
            report.max_rel_error = max(report.max_rel_error, err)
    return report
