"""Finite-difference validation of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor

# |a - n| / max(|a|, |n|, floor): the floor keeps near-zero entries from
# turning finite-difference rounding noise into huge relative errors
DENOM_FLOOR = 1e-6


@dataclass
class GradCheckFailure:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    tol: float
    checked: int = 0
    max_rel_error: float = 0.0
    worst: str = ""
    failures: list[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.checked > 0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} checked={self.checked} max_rel_error={self.max_rel_error:.3e} "
                f"tol={self.tol:g} failures={len(self.failures)}")


def relative_error(a: float, n: float, floor: float = DENOM_FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    corrupt: bool = False,
    floor: float = DENOM_FLOOR,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the graph from scratch on every call and be
    deterministic (reseed any RNG it uses inside).  With ``max_entries`` only
    that many randomly chosen entries per parameter are perturbed.  ``corrupt``
    perturbs the analytic gradients, as a negative control.  ``floor`` is the
    smallest denominator of the relative error, so entries below it are in
    effect compared with absolute tolerance ``tol * floor``.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    if corrupt:
        for g in analytic.values():
            g += 1e-2 * (1.0 + np.abs(g))
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            chooser = rng if rng is not None else np.random.Generator(np.random.Philox(0))
            indices = np.sort(chooser.choice(flat.size, size=max_entries, replace=False))
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = float(analytic[name].reshape(-1)[i])
            err = relative_error(a, numeric, floor)
            report.checked += 1
            idx = tuple(int(j) for j in np.unravel_index(i, p.shape)) if p.shape else ()
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = f"{name}{list(idx)}"
            if not err < tol:
                report.failures.append(GradCheckFailure(name, idx, a, numeric, err))
    for p in params.values():
        p.grad = None
    return report
