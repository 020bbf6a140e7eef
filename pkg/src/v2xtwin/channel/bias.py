"""Systematic RSSI offset compensation from measured-minus-predicted residuals."""

from __future__ import annotations

import math
from collections import deque
from typing import Sequence

DEFAULT_ALPHA = 0.3


def ewma(values: Sequence[float], alpha: float = DEFAULT_ALPHA) -> float:
    """Exponentially weighted mean, seeded with the first value."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    it = iter(values)
    try:
        acc = float(next(it))
    except StopIteration:
        raise ValueError("ewma of an empty sequence") from None
    for r in it:
        acc = alpha * float(r) + (1.0 - alpha) * acc
    return acc


def apply_bias_correction(predicted_rssi_dbm: float, history: Sequence[float],
                          alpha: float = DEFAULT_ALPHA) -> float:
    """Shift a prediction by the EWMA of past residuals; empty history is a no-op.

    A -inf prediction (no paths) stays -inf.
    """
    finite = [r for r in history if math.isfinite(r)]
    if not finite or not math.isfinite(predicted_rssi_dbm):
        return predicted_rssi_dbm
    return predicted_rssi_dbm + ewma(finite, alpha)


class BiasTracker:
    """Bounded per-link residual history."""

    def __init__(self, alpha: float = DEFAULT_ALPHA, maxlen: int = 256):
        self.alpha = alpha
        self._hist: dict[tuple[str, str], deque] = {}
        self._maxlen = maxlen

    def record(self, link, measured_dbm: float, predicted_dbm: float) -> None:
        if math.isfinite(measured_dbm) and math.isfinite(predicted_dbm):
            self._hist.setdefault(tuple(link), deque(maxlen=self._maxlen)).append(measured_dbm - predicted_dbm)

    def history(self, link) -> list[float]:
        return list(self._hist.get(tuple(link), ()))

    def correct(self, link, predicted_dbm: float) -> float:
        return apply_bias_correction(predicted_dbm, self.history(link), self.alpha)
