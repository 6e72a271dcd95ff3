"""
Central finite-difference verification of analytic gradients.

`f` maps a parameter container (anything exposing `parameters()` as a dict of
arrays, e.g. ModelState) to `(loss, GradientTape)`. Each checked entry is
perturbed in place by +/- step and restored afterwards.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from src.domain.network import GradientTape
from src.errors import NumericError

logger = logging.getLogger("GradCheck")

ERROR_FLOOR = 1e-8


@dataclass
class BlockCheck:
    name: str
    max_relative_error: float
    max_abs_error: float
    n_checked: int


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    blocks: Dict[str, BlockCheck] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max((b.max_relative_error for b in self.blocks.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return all(b.max_relative_error <= self.tolerance for b in self.blocks.values())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"block": b.name, "max_rel_error": b.max_relative_error, "max_abs_error": b.max_abs_error,
             "n_checked": b.n_checked, "passed": b.max_relative_error <= self.tolerance}
            for b in self.blocks.values()
        ], columns=["block", "max_rel_error", "max_abs_error", "n_checked", "passed"])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> Tuple[float, float]:
    """Block-normalised error: max|a - n| / max(max|a|, max|n|, floor)."""
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), ERROR_FLOOR)
    return diff / scale, diff


def _evaluate(f, state) -> float:
    value, _ = f(state)
    value = float(value)
    if not np.isfinite(value):
        raise NumericError("Non-finite loss at a perturbed point")
    return value


def grad_check(f: Callable, state, step: float = 1e-5, tolerance: float = 1e-4,
               blocks: Optional[Iterable[str]] = None, max_entries: Optional[int] = None,
               seed: int = 0) -> GradCheckReport:
    if step <= 0:
        raise ValueError("step must be positive")
    _, tape = f(state)
    params = state.parameters()
    names = list(blocks) if blocks is not None else list(params)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, step=step)

    for name in names:
        theta = params[name]
        analytic = np.asarray(tape[name], dtype=np.float64).reshape(-1)
        flat = theta.reshape(-1)
        if not np.shares_memory(flat, theta):
            raise ValueError(f"Parameter block {name} is not contiguous; cannot perturb in place")
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

        numeric = np.empty(indices.size)
        for j, idx in enumerate(indices):
            original = flat[idx]
            flat[idx] = original + step
            plus = _evaluate(f, state)
            flat[idx] = original - step
            minus = _evaluate(f, state)
            flat[idx] = original
            numeric[j] = (plus - minus) / (2.0 * step)

        rel, diff = relative_error(analytic[indices], numeric)
        report.blocks[name] = BlockCheck(name, rel, diff, int(indices.size))
        logger.debug(f"{name}: max rel error {rel:.3e} over {indices.size} entries")

    logger.info(f"Gradient check {'passed' if report.passed else 'FAILED'}: "
                f"max rel error {report.max_relative_error:.3e} (tolerance {tolerance:.0e})")
    return report


def quadratic(state) -> Tuple[float, GradientTape]:
    """|theta|^2 / 2 over every block; its gradient is theta itself."""
    params = state.parameters()
    value = 0.5 * sum(float(np.sum(v * v)) for v in params.values())
    return value, GradientTape({name: v.copy() for name, v in params.items()})
