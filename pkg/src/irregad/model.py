"""Encoder + decoder + one-class head, with the joint loss and its gradients.

The joint loss of a batch of ``B`` sequences is::

    L = L_oc(pooled features) + alpha * L_recon

with ``L_recon = (1/B) sum_i sum_k ||decode(h_i^(k)) - x_i^(k)||**2``.

:meth:`AnomalyModel.loss_and_grad` computes it through the fused kernels;
:meth:`AnomalyModel.reference_loss_and_grad` records the same loss on an
:class:`~irregad.linalg_grad.Tape`. Gradients are returned as the *sum* of
per-sequence gradients (``B`` times the gradient of the mean loss), the
quantity the minibatch update averages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import one_class
from .linalg_grad import Tape
from .decoder import (
    DecoderParams,
    decode_on_tape,
    decoder_forward_backward,
    reconstruction_pairs,
)
from .recurrent_encoder import (
    EncoderParams,
    FusedEncoder,
    PreparedSequence,
    encode_on_tape,
    pool,
    prepare,
)
from .one_class import ClassifierParams
from .sequences import IrregularSequence

__all__ = ["AnomalyModel", "LossParts"]


@dataclass(frozen=True)
class LossParts:
    total: float
    one_class: float
    recon: float


@dataclass
class AnomalyModel:
    encoder: EncoderParams
    decoder: DecoderParams
    head: ClassifierParams
    pooling: str = "last"
    recon_mode: str = "autoencode"
    alpha: float = 1000.0

    _PARTS = ("encoder", "decoder", "head")

    # ------------------------------------------------------------ parameters
    def parameters(self) -> dict[str, np.ndarray]:
        """Flat view ``{"encoder.W_fx": array, ...}``; arrays are live references."""
        out = {}
        for part in self._PARTS:
            for k, v in getattr(self, part).weights.items():
                out[f"{part}.{k}"] = v
        return out

    def load_parameters(self, flat: Mapping[str, np.ndarray]) -> None:
        for name, value in flat.items():
            part, key = name.split(".", 1)
            weights = getattr(self, part).weights
            if key not in weights:
                raise KeyError(name)
            arr = np.array(value, dtype=np.float64)
            if arr.shape != weights[key].shape:
                raise ValueError(f"{name}: shape {arr.shape} != {weights[key].shape}")
            weights[key] = arr

    def copy(self) -> AnomalyModel:
        return AnomalyModel(self.encoder.copy(), self.decoder.copy(), self.head.copy(),
                            self.pooling, self.recon_mode, self.alpha)

    def with_parameters(self, flat: Mapping[str, np.ndarray]) -> AnomalyModel:
        m = self.copy()
        m.load_parameters(flat)
        return m

    # ------------------------------------------------------------- inference
    def prepare(self, seqs: Iterable[IrregularSequence]) -> list[PreparedSequence]:
        return [prepare(self.encoder, s) for s in seqs]

    def _as_prepared(self, batch) -> list[PreparedSequence]:
        return [b if isinstance(b, PreparedSequence) else prepare(self.encoder, b) for b in batch]

    def features(self, batch) -> np.ndarray:
        fe = FusedEncoder(self.encoder)
        return np.vstack([pool(fe.forward(p)["H"], self.pooling) for p in self._as_prepared(batch)])

    def scores(self, batch) -> np.ndarray:
        return np.atleast_1d(one_class.anomaly_score(self.head, self.features(batch)))

    def score(self, seq) -> float:
        return float(self.scores([seq])[0])

    # ------------------------------------------------------------------ loss
    def loss_and_grad(self, batch, labels: Sequence[int] | None = None, *, need_grad: bool = True
                      ) -> tuple[LossParts, dict[str, np.ndarray] | None]:
        """Mean joint loss over ``batch`` and the summed per-sequence gradients.

        Args:
            batch: Sequences or prepared sequences.
            labels: ``None`` for unsupervised training; otherwise one entry
                per sequence in {-1, 0, +1}, 0 meaning unlabeled.
        """
        preps = self._as_prepared(batch)
        B = len(preps)
        if B == 0:
            raise ValueError("empty batch")
        fe = FusedEncoder(self.encoder)
        caches = [fe.forward(p) for p in preps]
        pooled = np.vstack([pool(c["H"], self.pooling) for c in caches])
        lab = None if labels is None else np.asarray(labels, dtype=np.float64)
        l_oc, g_head, d_pooled = one_class.loss_and_grad(self.head, pooled, lab)

        inputs = np.vstack([reconstruction_pairs(c["H"], p.X[:, :self.encoder.input_dim], self.recon_mode)
                            for c, p in zip(caches, preps)])
        targets = np.vstack([p.X[:, :self.encoder.input_dim] for p in preps])
        sq_err, g_dec, d_inputs = decoder_forward_backward(self.decoder, inputs, targets,
                                                           weight=self.alpha / B)
        recon = sq_err / B
        parts = LossParts(l_oc + self.alpha * recon, l_oc, recon)
        if not need_grad:
            return parts, None

        offset = 0
        for c, p, dpool in zip(caches, preps, d_pooled):
            K = len(p)
            dH = np.zeros((K, self.encoder.state_dim))
            rows = d_inputs[offset:offset + K]
            offset += K
            if self.recon_mode == "autoencode":
                dH += rows
            else:
                dH[:-1] += rows[1:]
            if self.pooling == "last":
                dH[-1] += dpool
            else:
                dH += dpool / K
            fe.backward(c, dH)

        grads: dict[str, np.ndarray] = {}
        for k, v in fe.gradients().items():
            grads[f"encoder.{k}"] = B * v
        for k, v in g_dec.items():
            grads[f"decoder.{k}"] = B * v
        for k, v in g_head.items():
            grads[f"head.{k}"] = B * v
        return parts, grads

    def loss(self, batch, labels: Sequence[int] | None = None) -> LossParts:
        return self.loss_and_grad(batch, labels, need_grad=False)[0]

    # -------------------------------------------------------- tape reference
    def reference_loss_and_grad(self, batch, labels: Sequence[int] | None = None
                                ) -> tuple[float, dict[str, np.ndarray]]:
        """Same contract as :meth:`loss_and_grad`, computed on an autodiff tape."""
        preps = self._as_prepared(batch)
        B = len(preps)
        tape = Tape()
        tensors = {name: tape.variable(arr, name=name) for name, arr in self.parameters().items()}
        enc_w = {k.split(".", 1)[1]: t for k, t in tensors.items() if k.startswith("encoder.")}
        dec_w = {k.split(".", 1)[1]: t for k, t in tensors.items() if k.startswith("decoder.")}
        head_w = {k.split(".", 1)[1]: t for k, t in tensors.items() if k.startswith("head.")}
        pooled = []
        recon = None
        M = self.encoder.input_dim
        for p in preps:
            states, pooled_t = encode_on_tape(tape, self.encoder, enc_w, p, self.pooling)
            pooled.append(pooled_t)
            zero = tape.constant(np.zeros(self.encoder.state_dim))
            for k in range(len(p)):
                if self.recon_mode == "autoencode":
                    h = states[k]
                else:
                    h = states[k - 1] if k > 0 else zero
                err = tape.sub(decode_on_tape(tape, self.decoder, dec_w, h), tape.constant(p.X[k, :M]))
                term = tape.sum(tape.square(err))
                recon = term if recon is None else tape.add(recon, term)
        l_oc = one_class.loss_on_tape(tape, self.head, head_w, pooled,
                                      None if labels is None else list(labels))
        total = tape.add(l_oc, tape.scale(recon, self.alpha / B))
        g = tape.backward(total)
        return total.item(), {name: B * g[t] for name, t in tensors.items()}
