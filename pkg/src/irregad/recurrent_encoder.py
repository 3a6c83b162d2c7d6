"""Time-aware recurrent encoders for irregularly sampled sequences.

Six cell variants share one interface:

``LSTM``
    Plain LSTM; sampling times are ignored.
``A-LSTM``
    The elapsed time is appended to the input as one extra feature.
``D-LSTM``
    The carried state decays by ``exp(-gamma * delta)`` before each update.
``M-LSTM``
    Forget, input and output products are scaled by learned time modulation
    gates ``sigmoid(W_t @ [delta**0, ..., delta**tau])``.
``M-RNN`` / ``M-GRU``
    Plain RNN and GRU updates carrying the same kind of modulation gates.

Elapsed times are measured in units of ``nominal_period`` before they enter
any cell, and the first step of every sequence sees one nominal period.

Three evaluation routes exist and are kept in agreement by the tests:

* the public ``*_step`` functions and :func:`encode_on_tape`, built on
  :mod:`irregad.linalg_grad` (reference gradients);
* :class:`FusedEncoder`, which runs whole sequences through the fused
  kernels in :mod:`irregad.kernels` (training path);
* the straight-line oracles in the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import kernels
from .linalg_grad import NonFiniteError, Tape, Tensor
from .sequences import IrregularSequence

__all__ = [
    "LSTM_FAMILY",
    "MODULATED",
    "POOLINGS",
    "VARIANTS",
    "EncoderParams",
    "EncodingError",
    "EncodingResult",
    "FusedEncoder",
    "PreparedSequence",
    "alstm_step",
    "delta_features",
    "dlstm_step",
    "encode",
    "encode_on_tape",
    "lstm_step",
    "mgru_step",
    "mlstm_step",
    "mrnn_step",
    "pool",
    "prepare",
]

VARIANTS = ("LSTM", "A-LSTM", "D-LSTM", "M-LSTM", "M-RNN", "M-GRU")
LSTM_FAMILY = ("LSTM", "A-LSTM", "D-LSTM", "M-LSTM")
MODULATED = ("M-LSTM", "M-RNN", "M-GRU")
POOLINGS = ("last", "mean")

_GATES = ("f", "i", "g", "o")


class EncodingError(ValueError):
    """Invalid encoder configuration or input sequence."""


def delta_features(delta: float, tau: int) -> np.ndarray:
    """Return ``[delta**0, delta**1, ..., delta**tau]`` with ``0**0 == 1``."""
    if delta < 0:
        raise EncodingError(f"elapsed time must be nonnegative, got {delta}")
    if tau < 0:
        raise EncodingError(f"tau must be nonnegative, got {tau}")
    return float(delta) ** np.arange(tau + 1, dtype=np.float64)


def _check_finite_state(arr: np.ndarray, what: str = "state") -> None:
    if not np.all(np.isfinite(arr)):
        step = int(np.argmax(~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)))
        raise NonFiniteError(f"non-finite {what} at step {step + 1}")


@dataclass
class EncoderParams:
    """Weights and configuration of one recurrent encoder.

    ``weights`` maps parameter names to arrays; names follow the gate
    notation, e.g. ``W_fx`` (forget gate, input weights) or ``W_ot``
    (output modulation weights).
    """

    variant: str
    input_dim: int
    state_dim: int
    tau: int = 10
    gamma: float = 0.1
    decay_cell: bool = False
    nominal_period: float = 1.0
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise EncodingError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.input_dim < 1 or self.state_dim < 1:
            raise EncodingError("input_dim and state_dim must be >= 1")
        if self.tau < 0:
            raise EncodingError("tau must be >= 0")
        if self.variant == "D-LSTM" and not self.gamma > 0:
            raise EncodingError("D-LSTM needs a positive decay rate gamma")
        if not self.nominal_period > 0:
            raise EncodingError("nominal_period must be positive")
        if self.weights:
            expected = self.weight_shapes()
            if set(self.weights) != set(expected):
                raise EncodingError(
                    f"{self.variant} weights must be {sorted(expected)}, got {sorted(self.weights)}"
                )
            for name, shape in expected.items():
                arr = np.asarray(self.weights[name], dtype=np.float64)
                if arr.shape != shape:
                    raise EncodingError(f"{name}: expected shape {shape}, got {arr.shape}")
                self.weights[name] = arr

    @property
    def feature_dim(self) -> int:
        """Width of the per-step input seen by the gates."""
        return self.input_dim + 1 if self.variant == "A-LSTM" else self.input_dim

    @property
    def n_time_features(self) -> int:
        return self.tau + 1

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        p, m, t = self.state_dim, self.feature_dim, self.n_time_features
        if self.variant in LSTM_FAMILY:
            shapes: dict[str, tuple[int, ...]] = {}
            for g in _GATES:
                shapes[f"W_{g}x"] = (p, m)
            for g in _GATES:
                shapes[f"W_{g}h"] = (p, p)
            for g in _GATES:
                shapes[f"b_{g}"] = (p,)
            if self.variant == "M-LSTM":
                for g in ("f", "i", "o"):
                    shapes[f"W_{g}t"] = (p, t)
            return shapes
        if self.variant == "M-RNN":
            return {"W_x": (p, m), "W_h": (p, p), "b": (p,), "W_tau": (p, t)}
        return {
            "W_zx": (p, m), "W_zh": (p, p), "b_z": (p,),
            "W_rx": (p, m), "W_rh": (p, p), "b_r": (p,),
            "W_hh": (p, p), "W_hx": (p, m),
            "W_th": (p, t), "W_ti": (p, t),
        }

    @classmethod
    def init(
        cls,
        variant: str,
        input_dim: int,
        state_dim: int,
        rng: np.random.Generator,
        *,
        tau: int = 10,
        gamma: float = 0.1,
        decay_cell: bool = False,
        nominal_period: float = 1.0,
    ) -> EncoderParams:
        """Uniform(-1/sqrt(p), 1/sqrt(p)) weights, forget bias 1, other biases 0."""
        params = cls(variant, input_dim, state_dim, tau=tau, gamma=gamma,
                     decay_cell=decay_cell, nominal_period=nominal_period)
        bound = 1.0 / math.sqrt(state_dim)
        weights = {}
        for name, shape in params.weight_shapes().items():
            if name.startswith("b"):
                weights[name] = np.zeros(shape)
            else:
                weights[name] = rng.uniform(-bound, bound, size=shape)
        if variant in LSTM_FAMILY:
            weights["b_f"] = np.ones(state_dim)
        params.weights = weights
        return params

    def copy(self) -> EncoderParams:
        return EncoderParams(self.variant, self.input_dim, self.state_dim, tau=self.tau,
                             gamma=self.gamma, decay_cell=self.decay_cell,
                             nominal_period=self.nominal_period,
                             weights={k: v.copy() for k, v in self.weights.items()})

    def config(self) -> dict:
        return dict(variant=self.variant, input_dim=self.input_dim, state_dim=self.state_dim,
                    tau=self.tau, gamma=self.gamma, decay_cell=self.decay_cell,
                    nominal_period=self.nominal_period)


@dataclass
class EncodingResult:
    """Per-step states, per-step cells (LSTM family only) and the pooled vector."""

    states: np.ndarray
    cells: np.ndarray | None
    pooled: np.ndarray


def pool(states: np.ndarray, mode: str) -> np.ndarray:
    """Reduce ``(K, p)`` states to one ``p`` vector by ``last`` or ``mean``."""
    states = np.asarray(states, dtype=np.float64)
    if mode == "last":
        return states[-1].copy()
    if mode == "mean":
        return states.mean(axis=0)
    raise EncodingError(f"unknown pooling {mode!r}; expected one of {POOLINGS}")


# --------------------------------------------------------------------------
# input preparation


@dataclass(frozen=True)
class PreparedSequence:
    """Kernel-ready arrays for one sequence under one encoder configuration."""

    X: np.ndarray
    F: np.ndarray
    decay_h: np.ndarray
    decay_c: np.ndarray
    deltas: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]


def prepare(params: EncoderParams, seq: IrregularSequence) -> PreparedSequence:
    """Build gate inputs, time features and decay factors for ``seq``."""
    K = len(seq)
    if K < 2:
        raise EncodingError(f"sequence {seq.id!r} has {K} samples; at least 2 are required")
    if seq.dim != params.input_dim:
        raise EncodingError(f"sequence {seq.id!r} has dim {seq.dim}, encoder expects {params.input_dim}")
    d = seq.deltas(first=params.nominal_period) / params.nominal_period
    if params.variant == "A-LSTM":
        X = np.ascontiguousarray(np.column_stack([seq.values, d]))
    else:
        X = np.ascontiguousarray(seq.values)
    if params.variant in MODULATED:
        with np.errstate(over="ignore"):
            F = np.ascontiguousarray(d[:, None] ** np.arange(params.tau + 1, dtype=np.float64))
        if not np.all(np.isfinite(F)):
            raise EncodingError(f"time features overflow for sequence {seq.id!r}; reduce tau")
    else:
        F = np.ones((K, 1))
    ones = np.ones(K)
    if params.variant == "D-LSTM":
        decay_h = np.exp(-params.gamma * d)
        decay_c = decay_h.copy() if params.decay_cell else ones
    else:
        decay_h = ones
        decay_c = ones.copy()
    return PreparedSequence(X, F, decay_h, decay_c, d)


# --------------------------------------------------------------------------
# fused route


class FusedEncoder:
    """Whole-sequence forward/backward through the active kernel backend.

    Weights are stacked once at construction, so build a new instance after
    every parameter update. Gradients accumulate across :meth:`backward`
    calls until :meth:`gradients` collects them.
    """

    def __init__(self, params: EncoderParams):
        self.params = params
        self._k = kernels.impl()
        w = params.weights
        p = params.state_dim
        v = params.variant
        if v in LSTM_FAMILY:
            self.Wx = np.ascontiguousarray(np.vstack([w[f"W_{g}x"] for g in _GATES]))
            self.Wh = np.ascontiguousarray(np.vstack([w[f"W_{g}h"] for g in _GATES]))
            self.b = np.concatenate([w[f"b_{g}"] for g in _GATES])
            if v == "M-LSTM":
                self.Wt = np.ascontiguousarray(np.vstack([w["W_ft"], w["W_it"], w["W_ot"]]))
            else:
                self.Wt = np.zeros((0, 1))
        elif v == "M-RNN":
            self.Wx = np.ascontiguousarray(w["W_x"])
            self.Wh = np.ascontiguousarray(w["W_h"])
            self.b = np.ascontiguousarray(w["b"])
            self.Wt = np.ascontiguousarray(w["W_tau"])
        else:
            self.Wx = np.ascontiguousarray(np.vstack([w["W_zx"], w["W_rx"]]))
            self.Wh = np.ascontiguousarray(np.vstack([w["W_zh"], w["W_rh"]]))
            self.b = np.concatenate([w["b_z"], w["b_r"]])
            self.Whh = np.ascontiguousarray(w["W_hh"])
            self.Whx = np.ascontiguousarray(w["W_hx"])
            self.Wt = np.ascontiguousarray(np.vstack([w["W_th"], w["W_ti"]]))
            self.gWhh = np.zeros((p, p))
            self.gWhx = np.zeros_like(self.Whx)
        self.gWx = np.zeros_like(self.Wx)
        self.gWh = np.zeros_like(self.Wh)
        self.gb = np.zeros_like(self.b)
        self.gWt = np.zeros_like(self.Wt)

    def forward(self, prep: PreparedSequence) -> dict:
        K, p = len(prep), self.params.state_dim
        H = np.empty((K, p))
        v = self.params.variant
        if v in LSTM_FAMILY:
            C = np.empty((K, p))
            A = np.empty((K, 4 * p))
            Mo = np.empty((K, 3 * p)) if v == "M-LSTM" else np.empty((K, 0))
            self._k.lstm_forward(self.Wx, self.Wh, self.b, self.Wt, prep.X, prep.F,
                                 prep.decay_h, prep.decay_c, H, C, A, Mo)
            cache = dict(H=H, C=C, A=A, Mo=Mo)
        elif v == "M-RNN":
            U = np.empty((K, p))
            Mo = np.empty((K, p))
            self._k.rnn_forward(self.Wx, self.Wh, self.b, self.Wt, prep.X, prep.F, H, U, Mo)
            cache = dict(H=H, C=None, U=U, Mo=Mo)
        else:
            Z = np.empty((K, 2 * p))
            Hc = np.empty((K, p))
            Mo = np.empty((K, 2 * p))
            self._k.gru_forward(self.Wx, self.Wh, self.b, self.Whh, self.Whx, self.Wt,
                                prep.X, prep.F, H, Z, Hc, Mo)
            cache = dict(H=H, C=None, Z=Z, Hc=Hc, Mo=Mo)
        _check_finite_state(H)
        cache["prep"] = prep
        return cache

    def backward(self, cache: dict, dH: np.ndarray) -> None:
        prep = cache["prep"]
        dH = np.ascontiguousarray(dH, dtype=np.float64)
        v = self.params.variant
        if v in LSTM_FAMILY:
            self._k.lstm_backward(self.Wx, self.Wh, self.Wt, prep.X, prep.F, prep.decay_h,
                                  prep.decay_c, cache["H"], cache["C"], cache["A"], cache["Mo"],
                                  dH, self.gWx, self.gWh, self.gb, self.gWt)
        elif v == "M-RNN":
            self._k.rnn_backward(self.Wx, self.Wh, self.Wt, prep.X, prep.F, cache["H"],
                                 cache["U"], cache["Mo"], dH, self.gWx, self.gWh, self.gb, self.gWt)
        else:
            self._k.gru_backward(self.Wx, self.Wh, self.Whh, self.Whx, self.Wt, prep.X, prep.F,
                                 cache["H"], cache["Z"], cache["Hc"], cache["Mo"], dH,
                                 self.gWx, self.gWh, self.gb, self.gWhh, self.gWhx, self.gWt)

    def gradients(self) -> dict[str, np.ndarray]:
        """Accumulated gradients keyed like ``params.weights``."""
        p = self.params.state_dim
        v = self.params.variant
        if v in LSTM_FAMILY:
            out = {}
            for n, g in enumerate(_GATES):
                out[f"W_{g}x"] = self.gWx[n * p:(n + 1) * p].copy()
                out[f"W_{g}h"] = self.gWh[n * p:(n + 1) * p].copy()
                out[f"b_{g}"] = self.gb[n * p:(n + 1) * p].copy()
            if v == "M-LSTM":
                for n, g in enumerate(("f", "i", "o")):
                    out[f"W_{g}t"] = self.gWt[n * p:(n + 1) * p].copy()
            return out
        if v == "M-RNN":
            return {"W_x": self.gWx.copy(), "W_h": self.gWh.copy(), "b": self.gb.copy(),
                    "W_tau": self.gWt.copy()}
        return {
            "W_zx": self.gWx[:p].copy(), "W_rx": self.gWx[p:].copy(),
            "W_zh": self.gWh[:p].copy(), "W_rh": self.gWh[p:].copy(),
            "b_z": self.gb[:p].copy(), "b_r": self.gb[p:].copy(),
            "W_hh": self.gWhh.copy(), "W_hx": self.gWhx.copy(),
            "W_th": self.gWt[:p].copy(), "W_ti": self.gWt[p:].copy(),
        }


def encode(params: EncoderParams, seq: IrregularSequence | PreparedSequence,
           pooling: str = "last") -> EncodingResult:
    """Run ``seq`` through the encoder from zero initial state and pool."""
    if pooling not in POOLINGS:
        raise EncodingError(f"unknown pooling {pooling!r}; expected one of {POOLINGS}")
    prep = seq if isinstance(seq, PreparedSequence) else prepare(params, seq)
    cache = FusedEncoder(params).forward(prep)
    return EncodingResult(cache["H"], cache["C"], pool(cache["H"], pooling))


# --------------------------------------------------------------------------
# tape route

TensorMap = Mapping[str, Tensor]


def _affine(tape: Tape, w: TensorMap, gate: str, x: Tensor, h: Tensor) -> Tensor:
    return tape.add(tape.add(tape.matmul(w[f"W_{gate}x"], x), tape.matmul(w[f"W_{gate}h"], h)),
                    w[f"b_{gate}"])


def lstm_cell_on_tape(tape: Tape, w: TensorMap, x: Tensor, h_prev: Tensor, c_prev: Tensor,
                      feats: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """One LSTM update; with ``feats`` the forget/input/output products are modulated."""
    f = tape.sigmoid(_affine(tape, w, "f", x, h_prev))
    i = tape.sigmoid(_affine(tape, w, "i", x, h_prev))
    g = tape.tanh(_affine(tape, w, "g", x, h_prev))
    o = tape.sigmoid(_affine(tape, w, "o", x, h_prev))
    keep = tape.mul(c_prev, f)
    write = tape.mul(g, i)
    if feats is not None:
        keep = tape.mul(keep, tape.sigmoid(tape.matmul(w["W_ft"], feats)))
        write = tape.mul(write, tape.sigmoid(tape.matmul(w["W_it"], feats)))
    c = tape.add(keep, write)
    h = tape.mul(tape.tanh(c), o)
    if feats is not None:
        h = tape.mul(h, tape.sigmoid(tape.matmul(w["W_ot"], feats)))
    return h, c


def rnn_cell_on_tape(tape: Tape, w: TensorMap, x: Tensor, h_prev: Tensor, feats: Tensor) -> Tensor:
    u = tape.tanh(tape.add(tape.add(tape.matmul(w["W_x"], x), tape.matmul(w["W_h"], h_prev)), w["b"]))
    return tape.mul(u, tape.sigmoid(tape.matmul(w["W_tau"], feats)))


def gru_cell_on_tape(tape: Tape, w: TensorMap, x: Tensor, h_prev: Tensor, feats: Tensor) -> Tensor:
    z = tape.sigmoid(tape.add(tape.add(tape.matmul(w["W_zx"], x), tape.matmul(w["W_zh"], h_prev)), w["b_z"]))
    r = tape.sigmoid(tape.add(tape.add(tape.matmul(w["W_rx"], x), tape.matmul(w["W_rh"], h_prev)), w["b_r"]))
    cand = tape.tanh(tape.add(tape.matmul(w["W_hh"], tape.mul(r, h_prev)), tape.matmul(w["W_hx"], x)))
    th = tape.sigmoid(tape.matmul(w["W_th"], feats))
    ti = tape.sigmoid(tape.matmul(w["W_ti"], feats))
    ones = tape.constant(np.ones(z.shape))
    keep = tape.mul(tape.mul(tape.sub(ones, z), h_prev), th)
    return tape.add(keep, tape.mul(tape.mul(z, cand), ti))


def encode_on_tape(tape: Tape, params: EncoderParams, w: TensorMap, prep: PreparedSequence,
                   pooling: str = "last") -> tuple[list[Tensor], Tensor]:
    """Record the full unrolled encoder on ``tape``; returns (states, pooled)."""
    p = params.state_dim
    v = params.variant
    h = tape.constant(np.zeros(p))
    c = tape.constant(np.zeros(p))
    states: list[Tensor] = []
    for k in range(len(prep)):
        x = tape.constant(prep.X[k])
        feats = tape.constant(prep.F[k]) if v in MODULATED else None
        if v in LSTM_FAMILY:
            hp = tape.scale(h, prep.decay_h[k]) if v == "D-LSTM" else h
            cp = tape.scale(c, prep.decay_c[k]) if (v == "D-LSTM" and params.decay_cell) else c
            h, c = lstm_cell_on_tape(tape, w, x, hp, cp, feats)
        elif v == "M-RNN":
            h = rnn_cell_on_tape(tape, w, x, h, feats)
        else:
            h = gru_cell_on_tape(tape, w, x, h, feats)
        states.append(h)
    if pooling == "last":
        pooled = states[-1]
    elif pooling == "mean":
        pooled = tape.mean(states)
    else:
        raise EncodingError(f"unknown pooling {pooling!r}")
    return states, pooled


# --------------------------------------------------------------------------
# single-step numpy API


def _run_step(params: EncoderParams, body: Callable[[Tape, dict[str, Tensor]], tuple[Tensor, ...]]):
    tape = Tape()
    w = {k: tape.constant(v, name=k) for k, v in params.weights.items()}
    try:
        outs = body(tape, w)
    except NonFiniteError as exc:
        raise NonFiniteError(f"{params.variant} step: {exc}") from None
    return tuple(o.numpy() for o in outs)


def _vec(tape: Tape, v) -> Tensor:
    return tape.constant(np.atleast_1d(np.asarray(v, dtype=np.float64)))


def _normalized(params: EncoderParams, delta: float) -> float:
    if delta < 0:
        raise EncodingError(f"elapsed time must be nonnegative, got {delta}")
    return float(delta) / params.nominal_period


def lstm_step(params: EncoderParams, x, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    """Standard LSTM update using the ``W_*x``, ``W_*h``, ``b_*`` weights."""
    return _run_step(params, lambda t, w: lstm_cell_on_tape(
        t, w, _vec(t, x), _vec(t, h_prev), _vec(t, c_prev)))


def alstm_step(params: EncoderParams, x, delta: float, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    """LSTM update on the augmented input ``[x, delta]``."""
    d = _normalized(params, delta)
    xa = np.append(np.atleast_1d(np.asarray(x, dtype=np.float64)), d)
    return lstm_step(params, xa, h_prev, c_prev)


def dlstm_step(params: EncoderParams, x, delta: float, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    """LSTM update after decaying the carried state by ``exp(-gamma * delta)``."""
    factor = math.exp(-params.gamma * _normalized(params, delta))
    h_dec = np.asarray(h_prev, dtype=np.float64) * factor
    c_dec = np.asarray(c_prev, dtype=np.float64) * (factor if params.decay_cell else 1.0)
    return lstm_step(params, x, h_dec, c_dec)


def mlstm_step(params: EncoderParams, x, delta: float, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    """LSTM update with time modulation of the forget, input and output products."""
    feats = delta_features(_normalized(params, delta), params.tau)
    return _run_step(params, lambda t, w: lstm_cell_on_tape(
        t, w, _vec(t, x), _vec(t, h_prev), _vec(t, c_prev), t.constant(feats)))


def mrnn_step(params: EncoderParams, x, delta: float, h_prev) -> np.ndarray:
    """``tanh(W_x x + W_h h + b) * sigmoid(W_tau @ delta_features)``."""
    feats = delta_features(_normalized(params, delta), params.tau)
    return _run_step(params, lambda t, w: (rnn_cell_on_tape(
        t, w, _vec(t, x), _vec(t, h_prev), t.constant(feats)),))[0]


def mgru_step(params: EncoderParams, x, delta: float, h_prev) -> np.ndarray:
    """GRU update whose carried and candidate terms are time modulated."""
    feats = delta_features(_normalized(params, delta), params.tau)
    return _run_step(params, lambda t, w: (gru_cell_on_tape(
        t, w, _vec(t, x), _vec(t, h_prev), t.constant(feats)),))[0]
