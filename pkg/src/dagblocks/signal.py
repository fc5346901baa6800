"""The envelope that flows along connections during execution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class Signal:
    """Value-or-null plus ground truth, the active order, and the phase flag."""

    value: Tensor | None
    ground_truth: np.ndarray | None
    order: int
    is_train: bool

    @property
    def is_null(self) -> bool:
        return self.value is None

    def null_like(self) -> "Signal":
        return Signal(None, None, self.order, self.is_train)

    def with_value(self, value: Tensor, ground_truth=...) -> "Signal":
        gt = self.ground_truth if ground_truth is ... else ground_truth
        return Signal(value, gt, self.order, self.is_train)
