"""Differentiable one-class heads: the SVDD hypersphere and the OC-SVM hyperplane.

Both heads use an anomaly-positive *margin* per feature vector:

* SVDD: ``||phi(h) - c||**2 - r**2``
* OC-SVM: ``b - W . phi(h)``

and penalize it through the smoothed hinge ``psi(z) = log(1 + exp(beta z)) / beta``.
Scores follow the same convention: positive means anomaly (+1).
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .linalg_grad import Tape, Tensor, _sigmoid, softplus

__all__ = [
    "HEADS",
    "ClassifierParams",
    "OneClassError",
    "anomaly_score",
    "decide",
    "identity",
    "inverse_softplus",
    "loss_and_grad",
    "loss_on_tape",
    "ocsvm_loss",
    "semi_supervised_loss",
    "smooth_hinge",
    "svdd_loss",
]

HEADS = ("SVDD", "OCSVM")


class OneClassError(ValueError):
    pass


def identity(h: np.ndarray) -> np.ndarray:
    return h


def smooth_hinge(z, beta: float = 100.0):
    """Softplus approximation of ``max(0, z)``; exact as ``beta -> inf``."""
    if beta <= 0:
        raise OneClassError("beta must be positive")
    out = softplus(z, beta)
    return float(out) if np.ndim(out) == 0 else out


def inverse_softplus(r: float) -> float:
    r = max(float(r), 1e-6)
    return float(r + np.log(-np.expm1(-r)))


@dataclass
class ClassifierParams:
    """Trainable one-class head.

    ``weights`` holds ``c`` and ``r_raw`` (SVDD; radius ``softplus(r_raw)``)
    or ``W`` and ``b`` (OC-SVM). ``lam`` is the slack regularizer, ``beta``
    the hinge smoothing, ``nu`` the weight of unlabeled terms in the
    semi-supervised loss, ``feature_map`` the transform applied before the
    head (identity for training).
    """

    kind: str
    dim: int
    lam: float = 0.4
    beta: float = 100.0
    nu: float = 1.0
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    feature_map: Callable[[np.ndarray], np.ndarray] = identity

    def __post_init__(self) -> None:
        if self.kind not in HEADS:
            raise OneClassError(f"unknown head {self.kind!r}; expected one of {HEADS}")
        if not self.lam > 0:
            raise OneClassError("lambda must be positive")
        if not self.beta > 0:
            raise OneClassError("beta must be positive")
        if self.nu < 0:
            raise OneClassError("nu must be nonnegative")
        if not self.weights:
            if self.kind == "SVDD":
                self.weights = {"c": np.zeros(self.dim), "r_raw": np.array(inverse_softplus(1.0))}
            else:
                self.weights = {"W": np.zeros(self.dim), "b": np.array(0.0)}
        for k in list(self.weights):
            self.weights[k] = np.asarray(self.weights[k], dtype=np.float64)
        expected = {"c": (self.dim,), "r_raw": ()} if self.kind == "SVDD" else {"W": (self.dim,), "b": ()}
        for k, shape in expected.items():
            if k not in self.weights or self.weights[k].shape != shape:
                raise OneClassError(f"{self.kind} weight {k} must have shape {shape}")

    @classmethod
    def svdd(cls, c, r: float, **kw) -> ClassifierParams:
        c = np.asarray(c, dtype=np.float64)
        return cls("SVDD", c.shape[0], weights={"c": c, "r_raw": np.array(inverse_softplus(r))}, **kw)

    @classmethod
    def ocsvm(cls, W, b: float, **kw) -> ClassifierParams:
        W = np.asarray(W, dtype=np.float64)
        return cls("OCSVM", W.shape[0], weights={"W": W, "b": np.array(float(b))}, **kw)

    @classmethod
    def init(cls, kind: str, features: np.ndarray, rng: np.random.Generator, **kw) -> ClassifierParams:
        """Data-dependent start: SVDD centered on the features with the median
        distance as radius; OC-SVM with small random ``W`` and ``b = 0``."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        p = features.shape[1]
        if kind == "SVDD":
            c = features.mean(axis=0)
            r = float(np.median(np.linalg.norm(features - c, axis=1)))
            return cls.svdd(c, max(r, 1e-3), **kw)
        if kind == "OCSVM":
            return cls.ocsvm(rng.uniform(-0.01, 0.01, size=p), 0.0, **kw)
        raise OneClassError(f"unknown head {kind!r}")

    @property
    def radius(self) -> float:
        return float(softplus(self.weights["r_raw"]))

    def copy(self) -> ClassifierParams:
        return ClassifierParams(self.kind, self.dim, self.lam, self.beta, self.nu,
                                {k: v.copy() for k, v in self.weights.items()}, self.feature_map)

    def config(self) -> dict:
        return dict(kind=self.kind, dim=self.dim, lam=self.lam, beta=self.beta, nu=self.nu)


def _features(params: ClassifierParams, h) -> np.ndarray:
    return np.atleast_2d(params.feature_map(np.asarray(h, dtype=np.float64)))


def _margins(params: ClassifierParams, F: np.ndarray) -> np.ndarray:
    if F.shape[1] != params.dim:
        raise OneClassError(f"feature dim {F.shape[1]} does not match head dim {params.dim}")
    if params.kind == "SVDD":
        diff = F - params.weights["c"]
        return np.einsum("ij,ij->i", diff, diff) - params.radius ** 2
    return float(params.weights["b"]) - F @ params.weights["W"]


def anomaly_score(params: ClassifierParams, h):
    """Signed distance to the boundary; positive on the anomalous side.

    SVDD: ``||phi(h) - c|| - r``. OC-SVM: ``b - W . phi(h)``.
    Accepts one feature ``(p,)`` or a stack ``(N, p)``.
    """
    h = np.asarray(h, dtype=np.float64)
    F = _features(params, h)
    if F.shape[1] != params.dim:
        raise OneClassError(f"feature dim {F.shape[1]} does not match head dim {params.dim}")
    if params.kind == "SVDD":
        s = np.linalg.norm(F - params.weights["c"], axis=1) - params.radius
    else:
        s = float(params.weights["b"]) - F @ params.weights["W"]
    return float(s[0]) if h.ndim == 1 else s


def decide(score):
    """+1 (anomaly) where ``score > 0``, else -1."""
    return np.where(np.asarray(score) > 0, 1, -1) if np.ndim(score) else (1 if score > 0 else -1)


def _regularizer(params: ClassifierParams) -> float:
    if params.kind == "SVDD":
        return params.radius ** 2
    W = params.weights["W"]
    return 0.5 * float(W @ W) - float(params.weights["b"])


def _terms(params: ClassifierParams, n_labeled: int, labels, n_unlabeled: int):
    """Per-instance sign and weight: labeled first, then unlabeled."""
    signs = np.concatenate([-np.asarray(labels, dtype=np.float64).reshape(-1), np.ones(n_unlabeled)])
    weights = np.concatenate([np.ones(n_labeled), np.full(n_unlabeled, params.nu)])
    return signs, weights


def _loss(params: ClassifierParams, F: np.ndarray, signs: np.ndarray, weights: np.ndarray) -> float:
    if F.shape[0] == 0:
        raise OneClassError("one-class loss of an empty feature list")
    z = signs * _margins(params, F)
    total = float(np.sum(weights * softplus(z, params.beta)))
    return _regularizer(params) + total / (F.shape[0] * params.lam)


def svdd_loss(params: ClassifierParams, features) -> float:
    """``r**2 + 1/(I lam) * sum psi(||phi(h) - c||**2 - r**2)``."""
    if params.kind != "SVDD":
        raise OneClassError("svdd_loss needs an SVDD head")
    F = _features(params, features) if len(features) else np.empty((0, params.dim))
    return _loss(params, F, np.ones(len(F)), np.ones(len(F)))


def ocsvm_loss(params: ClassifierParams, features) -> float:
    """``||W||**2/2 + 1/(I lam) * sum psi(b - W . phi(h)) - b``."""
    if params.kind != "OCSVM":
        raise OneClassError("ocsvm_loss needs an OC-SVM head")
    F = _features(params, features) if len(features) else np.empty((0, params.dim))
    return _loss(params, F, np.ones(len(F)), np.ones(len(F)))


def semi_supervised_loss(params: ClassifierParams, labeled: Sequence[tuple[np.ndarray, int]],
                         unlabeled: Sequence[np.ndarray]) -> float:
    """Loss over labeled ``(h, y)`` pairs and unlabeled features.

    Labeled terms use ``psi(-y * margin)``, so nominal labels (-1) penalize
    the anomalous side exactly like the unsupervised loss and anomaly labels
    (+1) penalize the nominal side. Unlabeled terms are weighted by ``nu``;
    everything is normalized by ``(I + J) * lam``. The regularizer appears
    once.
    """
    if not labeled and not unlabeled:
        raise OneClassError("semi-supervised loss needs at least one instance")
    parts = []
    if labeled:
        parts.append(_features(params, np.vstack([np.asarray(h, dtype=np.float64) for h, _ in labeled])))
    if unlabeled:
        parts.append(_features(params, np.vstack([np.asarray(h, dtype=np.float64) for h in unlabeled])))
    F = np.vstack(parts)
    labels = [y for _, y in labeled]
    if any(y not in (-1, 1) for y in labels):
        raise OneClassError("labels must be -1 or +1")
    signs, weights = _terms(params, len(labeled), labels, len(unlabeled))
    return _loss(params, F, signs, weights)


def loss_and_grad(params: ClassifierParams, features: np.ndarray, labels: np.ndarray | None = None
                  ) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Loss, head-parameter gradients and per-feature gradients.

    Args:
        features: ``(N, p)`` pooled features (identity feature map only).
        labels: Optional length-``N`` array of -1/+1/0; 0 marks an unlabeled
            instance. ``None`` means all unlabeled with unit weight (the
            unsupervised loss).
    """
    if params.feature_map is not identity:
        raise OneClassError("gradients are only available for the identity feature map")
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    N = F.shape[0]
    if N == 0:
        raise OneClassError("one-class loss of an empty feature list")
    if labels is None:
        signs, weights = np.ones(N), np.ones(N)
    else:
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        unl = labels == 0
        signs = np.where(unl, 1.0, -labels)
        weights = np.where(unl, params.nu, 1.0)
    m = _margins(params, F)
    z = signs * m
    value = _regularizer(params) + float(np.sum(weights * softplus(z, params.beta))) / (N * params.lam)
    g = weights * signs * _sigmoid(params.beta * z) / (N * params.lam)
    grads: dict[str, np.ndarray] = {}
    if params.kind == "SVDD":
        diff = F - params.weights["c"]
        r = params.radius
        dF = 2.0 * g[:, None] * diff
        grads["c"] = -dF.sum(axis=0)
        dr = 2.0 * r - 2.0 * r * float(g.sum())
        grads["r_raw"] = np.array(dr * float(_sigmoid(np.atleast_1d(params.weights["r_raw"]))[0]))
    else:
        W = params.weights["W"]
        dF = -g[:, None] * W[None, :]
        grads["W"] = W - g @ F
        grads["b"] = np.array(float(g.sum()) - 1.0)
    return value, grads, dF


def loss_on_tape(tape: Tape, params: ClassifierParams, w: dict[str, Tensor],
                 features: Sequence[Tensor], labels: Sequence[int] | None = None) -> Tensor:
    """Record the one-class loss (same conventions as :func:`loss_and_grad`)."""
    N = len(features)
    if N == 0:
        raise OneClassError("one-class loss of an empty feature list")
    semi = labels is not None
    labels = [0] * N if labels is None else list(labels)
    if params.kind == "SVDD":
        r = tape.softplus(w["r_raw"], 1.0)
        r2 = tape.square(r)
        reg = r2
    else:
        reg = tape.sub(tape.scale(tape.dot(w["W"], w["W"]), 0.5), w["b"])
    acc = None
    for h, y in zip(features, labels):
        if params.kind == "SVDD":
            diff = tape.sub(h, w["c"])
            margin = tape.sub(tape.sum(tape.square(diff)), r2)
        else:
            margin = tape.sub(w["b"], tape.dot(w["W"], h))
        if y == 0:
            sign, weight = 1.0, (params.nu if semi else 1.0)
        else:
            sign, weight = -float(y), 1.0
        term = tape.scale(tape.softplus(tape.scale(margin, sign), params.beta), weight)
        acc = term if acc is None else tape.add(acc, term)
    return tape.add(reg, tape.scale(acc, 1.0 / (N * params.lam)))
