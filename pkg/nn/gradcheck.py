"""
Central finite-difference verification of analytic gradients
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from nn.core import ParameterBlock, zero_grads

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Outcome of one grad_check call"""
    max_rel_error: float
    tolerance: float
    per_block: dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    f: Callable[[], float],
    params: Iterable[ParameterBlock],
    tolerance: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckReport:
    """
    Compare analytic gradients against central finite differences.

    `f` evaluates the scalar loss at the current parameter values and
    accumulates its analytic gradient into each block's grads. Inputs can
    be checked too by wrapping them in a ParameterBlock that `f` reads and
    writes its input cotangent into.

    The error per entry is |analytic - numeric| / max(1, |numeric|).
    Gradient buffers are left zeroed.
    """
    params = list(params)
    zero_grads(params)
    f()
    analytic = {block.name: block.grads.copy() for block in params}
    zero_grads(params)

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    for block in params:
        block_analytic = analytic[block.name]
        block_error = 0.0
        for index in np.ndindex(*block.shape):
            original = block.values[index]
            block.values[index] = original + h
            f_plus = f()
            block.values[index] = original - h
            f_minus = f()
            block.values[index] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            error = abs(block_analytic[index] - numeric) / max(1.0, abs(numeric))
            block_error = max(block_error, error)
        # f() accumulates on every call
        zero_grads(params)
        report.per_block[block.name] = block_error
        report.checked_entries += block.size
        report.max_rel_error = max(report.max_rel_error, block_error)

    if not report.passed:
        worst = max(report.per_block, key=report.per_block.get)
        logger.warning(f"Gradient check failed: max rel err {report.max_rel_error:.3e} in '{worst}'")
    return report
