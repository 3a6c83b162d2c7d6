"""Dense decoder mapping recurrent states back to samples, and the reconstruction loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .linalg_grad import Tape, Tensor

__all__ = [
    "RECON_MODES",
    "DecoderError",
    "DecoderParams",
    "decode",
    "decode_on_tape",
    "decoder_forward_backward",
    "reconstruction_loss",
    "reconstruction_pairs",
]

RECON_MODES = ("autoencode", "predict")


class DecoderError(ValueError):
    pass


@dataclass
class DecoderParams:
    """A stack of ``depth`` dense layers; ReLU between layers, linear output.

    ``weights`` holds ``W_1, b_1, ..., W_D, b_D``; ``W_d`` is ``(out, in)``.
    """

    depth: int
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise DecoderError("decoder depth must be >= 1")
        prev = None
        for d in range(1, self.depth + 1):
            try:
                W = np.asarray(self.weights[f"W_{d}"], dtype=np.float64)
                b = np.asarray(self.weights[f"b_{d}"], dtype=np.float64)
            except KeyError as exc:
                raise DecoderError(f"missing decoder weight {exc.args[0]}") from None
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DecoderError(f"layer {d}: W {W.shape} and b {b.shape} do not match")
            if prev is not None and W.shape[1] != prev:
                raise DecoderError(f"layer {d} expects input {W.shape[1]}, previous layer gives {prev}")
            prev = W.shape[0]
            self.weights[f"W_{d}"] = W
            self.weights[f"b_{d}"] = b

    @property
    def in_dim(self) -> int:
        return self.weights["W_1"].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[f"W_{self.depth}"].shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, *,
             depth: int = 2, hidden: int | None = None) -> DecoderParams:
        hidden = in_dim if hidden is None else hidden
        dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        weights = {}
        for d in range(1, depth + 1):
            bound = 1.0 / math.sqrt(dims[d - 1])
            weights[f"W_{d}"] = rng.uniform(-bound, bound, size=(dims[d], dims[d - 1]))
            weights[f"b_{d}"] = np.zeros(dims[d])
        return cls(depth, weights)

    @classmethod
    def from_layers(cls, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> DecoderParams:
        weights = {}
        for d, (W, b) in enumerate(layers, start=1):
            weights[f"W_{d}"] = W
            weights[f"b_{d}"] = b
        return cls(len(layers), weights)

    def copy(self) -> DecoderParams:
        return DecoderParams(self.depth, {k: v.copy() for k, v in self.weights.items()})


def _forward(params: DecoderParams, Hs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    acts = [Hs]
    out = Hs
    for d in range(1, params.depth + 1):
        out = out @ params.weights[f"W_{d}"].T + params.weights[f"b_{d}"]
        if d < params.depth:
            out = np.maximum(out, 0.0)
        acts.append(out)
    return out, acts


def decode(params: DecoderParams, h: np.ndarray) -> np.ndarray:
    """Decode one state ``(p,)`` or a stack of states ``(N, p)``."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.in_dim:
        raise DecoderError(f"decoder expects input dim {params.in_dim}, got {h.shape[-1]}")
    out, _ = _forward(params, np.atleast_2d(h))
    return out[0] if h.ndim == 1 else out


def reconstruction_pairs(states: np.ndarray, values: np.ndarray, mode: str) -> np.ndarray:
    """Decoder inputs aligned with ``values`` for the given mode.

    ``autoencode`` pairs ``h^(k)`` with ``x^(k)``; ``predict`` pairs
    ``h^(k-1)`` with ``x^(k)`` using a zero state before the first sample.
    """
    if mode == "autoencode":
        return states
    if mode == "predict":
        return np.vstack([np.zeros((1, states.shape[1])), states[:-1]])
    raise DecoderError(f"unknown reconstruction mode {mode!r}; expected one of {RECON_MODES}")


def reconstruction_loss(params: DecoderParams, encodings: Sequence, sequences: Sequence,
                        mode: str = "autoencode") -> float:
    """Mean over sequences of the summed squared reconstruction error."""
    if not sequences:
        raise DecoderError("reconstruction loss of an empty batch")
    if len(encodings) != len(sequences):
        raise DecoderError("encodings and sequences are not aligned")
    total = 0.0
    for enc, seq in zip(encodings, sequences):
        states = getattr(enc, "states", enc)
        inputs = reconstruction_pairs(np.asarray(states), seq.values, mode)
        total += float(np.sum((decode(params, inputs) - seq.values) ** 2))
    return total / len(sequences)


def decoder_forward_backward(params: DecoderParams, inputs: np.ndarray, targets: np.ndarray,
                             weight: float = 1.0) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Squared-error sum plus gradients of ``weight`` times it.

    Returns ``sum((decode(inputs) - targets)**2)`` (unweighted), the decoder
    weight gradients and the gradient w.r.t. ``inputs``.
    """
    out, acts = _forward(params, inputs)
    resid = out - targets
    loss = float(np.sum(resid * resid))
    delta = 2.0 * weight * resid
    grads: dict[str, np.ndarray] = {}
    for d in range(params.depth, 0, -1):
        if d < params.depth:
            delta = delta * (acts[d] > 0.0)
        grads[f"W_{d}"] = delta.T @ acts[d - 1]
        grads[f"b_{d}"] = delta.sum(axis=0)
        delta = delta @ params.weights[f"W_{d}"]
    return loss, grads, delta


def decode_on_tape(tape: Tape, params: DecoderParams, w: Mapping[str, Tensor], h: Tensor) -> Tensor:
    out = h
    for d in range(1, params.depth + 1):
        out = tape.add(tape.matmul(w[f"W_{d}"], out), w[f"b_{d}"])
        if d < params.depth:
            out = tape.relu(out)
    return out
