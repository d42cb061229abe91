from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..quadratics import StackedPrecoder


@dataclass
class PrecoderResult:
    f: StackedPrecoder
    iterations: int = 0
    inner_iterations_total: int = 0
    lam: float = 0.0
    converged: bool = True
    objective: float = float("nan")
    stationarity_residual: float = float("nan")
    # rows of (outer_round, inner_iter, delta_norm, gamma)
    trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def per_user_beams(self) -> np.ndarray:
        return self.f.beams

    @property
    def power(self) -> float:
        return self.f.norm_sq


def uniform_power(directions: np.ndarray, cell_index: int = 0) -> StackedPrecoder:
    """Normalize each beam, then split unit total power evenly over nonzero beams."""
    D = np.array(directions, dtype=complex)
    norms = np.linalg.norm(D, axis=1)
    active = norms > 0
    if not np.all(active):
        import warnings

        warnings.warn(f"{np.count_nonzero(~active)} user(s) have a zero beam", RuntimeWarning)
    D[active] /= norms[active, None] * np.sqrt(np.count_nonzero(active))
    return StackedPrecoder.from_beams(D, cell_index)
