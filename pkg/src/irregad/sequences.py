"""The timestamped sequence record shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["IrregularSequence", "SequenceError"]


class SequenceError(ValueError):
    """A sequence violates its structural invariants."""


@dataclass(frozen=True, eq=False)
class IrregularSequence:
    """A variable-length multivariate sequence with sampling times.

    Attributes:
        values: ``(K, M)`` array of samples.
        timestamps: ``(K,)`` strictly increasing sampling times.
        label: ``-1`` (nominal), ``+1`` (anomaly) or ``None`` if unlabeled.
        id: Opaque identifier.
        klass: Original multi-class id before binary relabeling, if any.
    """

    values: np.ndarray
    timestamps: np.ndarray
    label: int | None = None
    id: str = ""
    klass: int | None = field(default=None)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        times = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        if values.ndim != 2:
            raise SequenceError(f"{self.id or 'sequence'}: values must be a (K, M) array")
        if values.shape[0] != times.shape[0]:
            raise SequenceError(
                f"{self.id or 'sequence'}: {values.shape[0]} samples but {times.shape[0]} timestamps"
            )
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise SequenceError(f"{self.id or 'sequence'}: empty sequence")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(times))):
            raise SequenceError(f"{self.id or 'sequence'}: non-finite values or timestamps")
        if np.any(np.diff(times) <= 0):
            raise SequenceError(f"{self.id or 'sequence'}: timestamps must be strictly increasing")
        if self.label is not None and self.label not in (-1, 1):
            raise SequenceError(f"{self.id or 'sequence'}: label must be -1, +1 or None")
        values.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", times)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def deltas(self, first: float = 1.0) -> np.ndarray:
        """Inter-arrival times; the first entry is ``first`` (no predecessor)."""
        out = np.empty(len(self))
        out[0] = first
        out[1:] = np.diff(self.timestamps)
        return out

    def replace(self, **changes) -> IrregularSequence:
        fields = dict(values=self.values, timestamps=self.timestamps, label=self.label,
                      id=self.id, klass=self.klass)
        fields.update(changes)
        return IrregularSequence(**fields)
