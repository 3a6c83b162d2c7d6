"""Joint minibatch training of encoder, decoder and one-class head.

One epoch shuffles the training set, cuts it into minibatches of ``B``
sequences and applies one update per minibatch using the mean gradient of
the joint loss. Sequences are processed individually (no padding), so
variable lengths need no special handling.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .decoder import RECON_MODES, DecoderParams
from .recurrent_encoder import POOLINGS, VARIANTS, EncoderParams, EncodingError
from .model import AnomalyModel, LossParts
from .one_class import HEADS, ClassifierParams
from .sequences import IrregularSequence

__all__ = [
    "MODES",
    "OPTIMIZERS",
    "Adam",
    "EarlyStopping",
    "Hyperparameters",
    "HyperparameterError",
    "NonFiniteGradient",
    "SelectionResult",
    "TrainReport",
    "TrainingDiverged",
    "build_model",
    "clip_by_global_norm",
    "combined_loss",
    "rank_candidates",
    "select_hyperparameters",
    "sgd_update",
    "train_offline",
    "training_labels",
]

OPTIMIZERS = ("sgd", "adam")
MODES = ("unsupervised", "semi", "supervised")


class HyperparameterError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """The loss or a gradient became non-finite."""


# Errors raised by numerics that have left the representable range.
NUMERIC_FAILURES = (EncodingError, FloatingPointError, OverflowError)


class NonFiniteGradient(TrainingDiverged):
    def __init__(self, tensor: str):
        super().__init__(f"non-finite gradient for {tensor}")
        self.tensor = tensor


@dataclass(frozen=True)
class Hyperparameters:
    """Everything that configures one training run.

    Attributes:
        variant: Recurrent cell, one of ``VARIANTS``.
        head: ``"SVDD"`` or ``"OCSVM"``.
        pooling: ``"last"`` or ``"mean"``.
        p: State dimension.
        B: Minibatch size.
        tau: Highest power of the time-difference features.
        lam: One-class slack regularizer.
        alpha: Weight of the reconstruction loss.
        gamma: State decay rate (D-LSTM).
        lr: Learning rate.
        beta: Hinge smoothing.
        nu: Weight of unlabeled terms in semi-supervised mode.
        n_epoch: Maximum number of epochs.
        n_tol: Early-stopping patience in epochs.
        optimizer: ``"sgd"`` or ``"adam"``.
        seed: Seeds initialization and shuffling.
        decoder_depth: Number of dense decoder layers.
        recon_mode: ``"autoencode"`` or ``"predict"``.
        clip_norm: Global gradient-norm clip; ``0`` disables clipping.
        decay_cell: D-LSTM also decays the cell state.
        nominal_period: Sampling period used to normalize time differences.
        mode: ``"unsupervised"``, ``"semi"`` or ``"supervised"``.
    """

    variant: str = "M-LSTM"
    head: str = "SVDD"
    pooling: str = "last"
    p: int = 8
    B: int = 32
    tau: int = 10
    lam: float = 0.4
    alpha: float = 1000.0
    gamma: float = 0.1
    lr: float = 1e-3
    beta: float = 100.0
    nu: float = 1.0
    n_epoch: int = 100
    n_tol: int = 3
    optimizer: str = "sgd"
    seed: int = 0
    decoder_depth: int = 2
    recon_mode: str = "autoencode"
    clip_norm: float = 5.0
    decay_cell: bool = False
    nominal_period: float = 1.0
    mode: str = "unsupervised"

    def __post_init__(self) -> None:
        checks = [
            (self.variant in VARIANTS, f"variant must be one of {VARIANTS}"),
            (self.head in HEADS, f"head must be one of {HEADS}"),
            (self.pooling in POOLINGS, f"pooling must be one of {POOLINGS}"),
            (self.optimizer in OPTIMIZERS, f"optimizer must be one of {OPTIMIZERS}"),
            (self.recon_mode in RECON_MODES, f"recon_mode must be one of {RECON_MODES}"),
            (self.mode in MODES, f"mode must be one of {MODES}"),
            (self.p >= 1 and self.B >= 1 and self.tau >= 1, "p, B and tau must be >= 1"),
            (self.lam > 0 and self.alpha > 0 and self.lr >= 0 and self.beta > 0,
             "lam, alpha and beta must be positive and lr nonnegative"),
            (self.gamma > 0, "gamma must be positive"),
            (self.nu >= 0, "nu must be nonnegative"),
            (self.n_epoch >= 0, "n_epoch must be >= 0"),
            (self.n_tol >= 1, "n_tol must be >= 1"),
            (self.decoder_depth >= 1, "decoder_depth must be >= 1"),
            (self.clip_norm >= 0, "clip_norm must be >= 0"),
            (self.nominal_period > 0, "nominal_period must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise HyperparameterError(message)
        for name in ("p", "B", "tau", "n_epoch", "n_tol", "seed", "decoder_depth"):
            if not isinstance(getattr(self, name), (int, np.integer)) or isinstance(getattr(self, name), bool):
                raise HyperparameterError(f"{name} must be an integer")

    @classmethod
    def from_dict(cls, values: Mapping) -> Hyperparameters:
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise HyperparameterError(f"unknown hyperparameters: {', '.join(unknown)}")
        coerced = {}
        for name, value in values.items():
            default = known[name].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise HyperparameterError(f"{name} must be true or false")
            elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            coerced[name] = value
        try:
            return cls(**coerced)
        except TypeError as exc:
            raise HyperparameterError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> Hyperparameters:
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------- model setup
def build_model(hp: Hyperparameters, input_dim: int, init_batch: Sequence[IrregularSequence],
                rng: np.random.Generator) -> AnomalyModel:
    """Random encoder and decoder; head initialized from ``init_batch`` features."""
    enc = EncoderParams.init(hp.variant, input_dim, hp.p, rng, tau=hp.tau, gamma=hp.gamma,
                             decay_cell=hp.decay_cell, nominal_period=hp.nominal_period)
    dec = DecoderParams.init(hp.p, input_dim, rng, depth=hp.decoder_depth)
    model = AnomalyModel(enc, dec, ClassifierParams(hp.head, hp.p), hp.pooling, hp.recon_mode, hp.alpha)
    feats = model.features(init_batch)
    model.head = ClassifierParams.init(hp.head, feats, rng, lam=hp.lam, beta=hp.beta, nu=hp.nu)
    return model


def training_labels(seqs: Sequence[IrregularSequence], mode: str) -> list[int] | None:
    """Per-sequence labels consumed by the loss: ``None`` when unsupervised.

    Semi-supervised mode maps missing labels to 0 (unlabeled). Supervised
    mode requires every sequence to carry a label.
    """
    if mode == "unsupervised":
        return None
    if mode == "supervised" and any(s.label is None for s in seqs):
        raise HyperparameterError("supervised mode requires a label on every sequence")
    return [0 if s.label is None else int(s.label) for s in seqs]


def combined_loss(encoder: EncoderParams, decoder: DecoderParams, classifier: ClassifierParams,
                  batch: Sequence[IrregularSequence], *, alpha: float = 1000.0, pooling: str = "last",
                  recon_mode: str = "autoencode", labels: Sequence[int] | None = None) -> float:
    """Joint loss ``L_oc + alpha * L_recon`` of a batch."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return AnomalyModel(encoder, decoder, classifier, pooling, recon_mode, alpha).loss(batch, labels).total


# ------------------------------------------------------------------- updates
def _check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        return dict(grads)
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return dict(grads)
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def _mean_gradient(params: Mapping[str, np.ndarray], grad_sum: Mapping[str, np.ndarray],
                   batch_size: int, clip_norm: float | None) -> dict[str, np.ndarray]:
    missing = sorted(set(params) - set(grad_sum))
    if missing:
        raise KeyError(f"no gradient for {', '.join(missing)}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    _check_finite(grad_sum)
    mean = {k: np.asarray(grad_sum[k], dtype=np.float64) / batch_size for k in params}
    return clip_by_global_norm(mean, clip_norm) if clip_norm else mean


def sgd_update(params: Mapping[str, np.ndarray], grad_sum: Mapping[str, np.ndarray], lr: float,
               batch_size: int, clip_norm: float | None = None) -> dict[str, np.ndarray]:
    """One descent step ``theta - lr * (1/B) * sum_i grad_i``.

    Args:
        params: Current tensors by name.
        grad_sum: Sum of per-sequence gradients, one entry per tensor.
        lr: Learning rate.
        batch_size: Number of sequences the gradients were summed over.
        clip_norm: Optional global-norm clip applied to the mean gradient.

    Returns:
        New tensors; ``params`` is not modified.

    Raises:
        NonFiniteGradient: A gradient has a NaN or infinite entry.
    """
    mean = _mean_gradient(params, grad_sum, batch_size, clip_norm)
    return {k: np.asarray(v, dtype=np.float64) - lr * mean[k] for k, v in params.items()}


class Adam:
    """Adaptive moment estimation with the usual defaults."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params: Mapping[str, np.ndarray], grad_sum: Mapping[str, np.ndarray],
               batch_size: int, clip_norm: float | None = None) -> dict[str, np.ndarray]:
        g = _mean_gradient(params, grad_sum, batch_size, clip_norm)
        self.t += 1
        out = {}
        for k, theta in params.items():
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g[k]
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g[k] * g[k]
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            out[k] = theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, params, grad_sum, batch_size, clip_norm=None):
        return sgd_update(params, grad_sum, self.lr, batch_size, clip_norm)


def _optimizer(hp: Hyperparameters):
    return Adam(hp.lr) if hp.optimizer == "adam" else _Sgd(hp.lr)


# ------------------------------------------------------------ early stopping
class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a new best.

    Only training epochs (``epoch >= 1``) take part; the evaluation before
    any update is a baseline, not an epoch.
    """

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch: int | None = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch``; return True when training should stop."""
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainReport:
    """Outcome of one training run.

    Index 0 of every loss list is the evaluation before the first update;
    index ``e`` is the end of epoch ``e``.

    Attributes:
        train_loss: Mean minibatch joint loss per epoch.
        val_loss: Validation joint loss per epoch.
        val_recon: Validation reconstruction loss per epoch.
        stop_epoch: Last epoch that ran.
        best_epoch: Epoch whose parameters ``model`` holds.
        stopped_early: Whether patience ran out before ``n_epoch``.
        model: Best-validation checkpoint.
        hp: Hyperparameters of the run.
        rng_state: Generator state after the last epoch.
    """

    train_loss: list[float]
    val_loss: list[float]
    val_recon: list[float]
    stop_epoch: int
    best_epoch: int
    stopped_early: bool
    model: AnomalyModel
    hp: Hyperparameters
    rng_state: dict = field(default_factory=dict)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]

    @property
    def best_val_recon(self) -> float:
        return self.val_recon[self.best_epoch]


def _loss_checked(model: AnomalyModel, seqs, labels, what: str) -> LossParts:
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            parts = model.loss(seqs, labels)
    except NUMERIC_FAILURES as exc:
        raise TrainingDiverged(f"{what}: {exc}") from None
    if not math.isfinite(parts.total):
        raise TrainingDiverged(f"{what}: loss is not finite")
    return parts


def train_offline(train: Sequence[IrregularSequence], validation: Sequence[IrregularSequence],
                  hp: Hyperparameters, *, model: AnomalyModel | None = None,
                  on_epoch: Callable[[int, float, float], None] | None = None) -> TrainReport:
    """Train with shuffled minibatches and patience-based early stopping.

    Args:
        train: Training sequences.
        validation: Validation sequences.
        hp: Hyperparameters; ``hp.seed`` fixes initialization and shuffling.
        model: Optional starting point; built from ``hp`` when omitted.
        on_epoch: Called as ``on_epoch(epoch, train_loss, val_loss)``.

    Returns:
        A :class:`TrainReport` whose ``model`` has the lowest validation loss
        seen, the untrained start included.

    Raises:
        TrainingDiverged: A loss or gradient became non-finite.
    """
    if len(train) == 0 or len(validation) == 0:
        raise ValueError("training and validation sets must be nonempty")
    rng = np.random.default_rng(hp.seed)
    if model is None:
        order = rng.permutation(len(train))[: hp.B]
        model = build_model(hp, train[0].dim, [train[i] for i in order], rng)
    else:
        model = model.copy()
    labels_all = training_labels(train, hp.mode)
    val_labels = training_labels(validation, hp.mode)
    preps = model.prepare(train)
    val_preps = model.prepare(validation)

    first = _loss_checked(model, preps, labels_all, "initial training loss")
    v0 = _loss_checked(model, val_preps, val_labels, "initial validation loss")
    train_hist, val_hist, recon_hist = [first.total], [v0.total], [v0.recon]
    best_model, best_epoch, best_val = model.copy(), 0, v0.total
    stopper = EarlyStopping(hp.n_tol)
    opt = _optimizer(hp)
    stopped_early = False
    epoch = 0

    for epoch in range(1, hp.n_epoch + 1):
        perm = rng.permutation(len(preps))
        batch_losses = []
        for start in range(0, len(perm), hp.B):
            idx = perm[start:start + hp.B]
            batch = [preps[i] for i in idx]
            labels = None if labels_all is None else [labels_all[i] for i in idx]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    parts, grads = model.loss_and_grad(batch, labels)
            except NUMERIC_FAILURES as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from None
            if not math.isfinite(parts.total):
                raise TrainingDiverged(f"epoch {epoch}: training loss is not finite")
            model.load_parameters(opt.update(model.parameters(), grads, len(batch), hp.clip_norm))
            batch_losses.append(parts.total * len(batch))
        train_hist.append(sum(batch_losses) / len(preps))
        val = _loss_checked(model, val_preps, val_labels, f"epoch {epoch} validation loss")
        val_hist.append(val.total)
        recon_hist.append(val.recon)
        if on_epoch is not None:
            on_epoch(epoch, train_hist[-1], val.total)
        if val.total < best_val:
            best_model, best_epoch, best_val = model.copy(), epoch, val.total
        if stopper.update(epoch, val.total):
            stopped_early = True
            break

    return TrainReport(train_hist, val_hist, recon_hist, epoch, best_epoch, stopped_early,
                       best_model, hp, rng.bit_generator.state)


# ---------------------------------------------------------------- selection
@dataclass
class SelectionResult:
    """Outcome of :func:`select_hyperparameters`.

    Attributes:
        best: Winning hyperparameters.
        report: Training report of the winner.
        reports: Report per candidate index; ``None`` for diverged candidates.
        ranking: Candidate indices that survived the alpha comparison, best first.
        errors: Divergence message per failed candidate index.
    """

    best: Hyperparameters
    report: TrainReport
    reports: list[TrainReport | None]
    ranking: list[int]
    errors: dict[int, str]


def _alpha_group_key(hp: Hyperparameters) -> tuple:
    d = hp.to_dict()
    d.pop("alpha")
    return tuple(sorted(d.items()))


def rank_candidates(candidates: Sequence[Hyperparameters],
                    reports: Sequence[TrainReport | None]) -> list[int]:
    """Order successful candidates from best to worst.

    Candidates that differ only in ``alpha`` are first reduced to the one with
    the lowest validation reconstruction loss, since joint losses under
    different weights are not comparable. Survivors are ranked by validation
    joint loss, ties going to smaller ``p`` and then smaller ``B``.
    """
    groups: dict[tuple, int] = {}
    for i, (hp, rep) in enumerate(zip(candidates, reports)):
        if rep is None:
            continue
        key = _alpha_group_key(hp)
        j = groups.get(key)
        if j is None or (rep.best_val_recon, hp.alpha) < (reports[j].best_val_recon, candidates[j].alpha):
            groups[key] = i
    survivors = sorted(groups.values())
    return sorted(survivors, key=lambda i: (reports[i].best_val_loss, candidates[i].p, candidates[i].B, i))


def select_hyperparameters(candidates: Sequence[Hyperparameters], train: Sequence[IrregularSequence],
                           validation: Sequence[IrregularSequence]) -> SelectionResult:
    """Train every candidate and keep the one with the best validation loss."""
    if not candidates:
        raise ValueError("no candidates")
    reports: list[TrainReport | None] = []
    errors: dict[int, str] = {}
    for i, hp in enumerate(candidates):
        try:
            reports.append(train_offline(train, validation, hp))
        except TrainingDiverged as exc:
            reports.append(None)
            errors[i] = str(exc)
    ranking = rank_candidates(candidates, reports)
    if not ranking:
        raise TrainingDiverged("every candidate diverged: " + "; ".join(errors.values()))
    best = ranking[0]
    return SelectionResult(candidates[best], reports[best], reports, ranking, errors)

