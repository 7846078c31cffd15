"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


@dataclass
class BlockResult:
    name: str
    max_rel_error: float
    n_checked: int
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    def __str__(self) -> str:
        rows = [f"{'ok' if b.passed else 'FAIL'}\t{b.name}\t{b.max_rel_error:.3e}\t({b.n_checked})" for b in self.blocks]
        return "\n".join(rows)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    floor: float = 1e-6,
    max_per_block: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` with central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps near-zero gradients from dividing by zero.  ``f`` must be
    deterministic.  ``max_per_block`` samples that many elements per tensor.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar function")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite function value")
    tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params]
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    for idx, (p, a) in enumerate(zip(params, analytic)):
        if not np.isfinite(a).all():
            raise FloatingPointError(f"non-finite gradient for {p.name or idx}")
        flat = p.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_per_block is not None and flat.size > max_per_block:
            positions = rng.choice(flat.size, size=max_per_block, replace=False)
        worst = 0.0
        for pos in positions:
            orig = flat[pos]
            flat[pos] = orig + h
            up = float(f().data)
            flat[pos] = orig - h
            down = float(f().data)
            flat[pos] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite value while perturbing {p.name or idx}")
            num = (up - down) / (2 * h)
            ana = a.reshape(-1)[pos]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
        report.blocks.append(BlockResult(p.name or f"param{idx}", worst, len(positions), worst <= tolerance))
    for p in params:
        p.grad = None
    return report
