"""Prequential online training and particle-swarm hyperparameter racing.

Every arriving sequence is first scored with the current parameters and only
then used for one update with a batch of one. During the racing window
several particles, each with its own hyperparameters and model, see the same
stream; after ``n_samples`` sequences the one with the lowest running loss
is kept and the others are dropped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .model import AnomalyModel
from .one_class import decide
from .sequences import IrregularSequence
from .trainer import (
    Adam,
    NUMERIC_FAILURES,
    Hyperparameters,
    TrainingDiverged,
    build_model,
    sgd_update,
    training_labels,
)

__all__ = [
    "DIMENSIONS",
    "OnlineError",
    "OnlineState",
    "Particle",
    "RaceResult",
    "SearchSpace",
    "Verdict",
    "check_sequence",
    "process_sequence",
    "pso_race",
    "run_stream",
]

DIMENSIONS = ("log_alpha", "log_lam", "log_lr", "p", "tau")


class OnlineError(ValueError):
    pass


@dataclass(frozen=True)
class Verdict:
    """Per-sequence output of the online detector."""

    id: str
    score: float
    decision: int
    seen: int
    loss: float

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "score": self.score, "decision": self.decision,
                           "seen": self.seen, "loss": self.loss}, sort_keys=True)


class OnlineState:
    """Model, optimizer and counters of one online learner.

    The model is built lazily from the first sequence, whose features seed
    the one-class head.

    Args:
        hp: Hyperparameters; ``B`` is ignored (updates use one sequence).
        model: Optional starting model.
        fitness_alpha: Reconstruction weight used for the running loss, so
            that learners with different ``alpha`` stay comparable.
    """

    def __init__(self, hp: Hyperparameters, model: AnomalyModel | None = None,
                 fitness_alpha: float | None = None):
        self.hp = hp
        self.rng = np.random.default_rng(hp.seed)
        self.model = None if model is None else model.copy()
        self.optimizer = Adam(hp.lr) if hp.optimizer == "adam" else None
        self.fitness_alpha = hp.alpha if fitness_alpha is None else fitness_alpha
        self.seen = 0
        self.committed = False
        self.window_sum = 0.0
        self.window_count = 0
        self.last_loss = math.nan

    @property
    def fitness(self) -> float:
        """Mean loss since the last window reset (``inf`` before any data)."""
        return self.window_sum / self.window_count if self.window_count else math.inf

    def reset_window(self) -> None:
        self.window_sum, self.window_count = 0.0, 0

    def retune(self, hp: Hyperparameters) -> None:
        """Switch to ``hp``; the model restarts when ``p`` or ``tau`` change."""
        rebuild = (hp.p, hp.tau) != (self.hp.p, self.hp.tau)
        self.hp = hp
        if rebuild:
            self.model = None
            self.rng = np.random.default_rng(hp.seed)
        elif self.model is not None:
            self.model.alpha = hp.alpha
            self.model.head.lam = hp.lam
        if hp.optimizer == "adam":
            if rebuild or self.optimizer is None:
                self.optimizer = Adam(hp.lr)
            self.optimizer.lr = hp.lr
        else:
            self.optimizer = None

    def copy(self) -> OnlineState:
        other = OnlineState(self.hp, self.model, self.fitness_alpha)
        other.rng = np.random.default_rng()
        other.rng.bit_generator.state = self.rng.bit_generator.state
        other.seen, other.committed = self.seen, self.committed
        other.window_sum, other.window_count, other.last_loss = self.window_sum, self.window_count, self.last_loss
        if self.optimizer is not None:
            other.optimizer = Adam(self.optimizer.lr)
            other.optimizer.t = self.optimizer.t
            other.optimizer.m = {k: v.copy() for k, v in self.optimizer.m.items()}
            other.optimizer.v = {k: v.copy() for k, v in self.optimizer.v.items()}
        return other


def check_sequence(seq, dim: int | None = None) -> None:
    """Raise :class:`OnlineError` unless ``seq`` can be scored by a ``dim``-input model."""
    if not isinstance(seq, IrregularSequence):
        raise OnlineError("expected an IrregularSequence")
    if len(seq) < 2:
        raise OnlineError(f"{seq.id or 'sequence'}: needs at least 2 samples")
    if dim is not None and seq.dim != dim:
        raise OnlineError(f"{seq.id or 'sequence'}: dimension {seq.dim}, model expects {dim}")


def process_sequence(state: OnlineState, seq: IrregularSequence) -> tuple[int, float, OnlineState]:
    """Score ``seq`` with the current parameters, then update on it.

    Returns:
        ``(decision, score, state)``; ``state`` is updated in place.

    Raises:
        OnlineError: ``seq`` cannot be encoded (too short, wrong dimension);
            the state is left untouched.
        TrainingDiverged: The update produced a non-finite loss or gradient.
    """
    check_sequence(seq, None if state.model is None else state.model.encoder.input_dim)
    if state.model is None:
        state.model = build_model(state.hp, seq.dim, [seq], state.rng)
    model = state.model
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            prep = model.prepare([seq])
            score = model.score(prep[0])
            labels = training_labels([seq], state.hp.mode)
            parts, grads = model.loss_and_grad(prep, labels)
    except NUMERIC_FAILURES as exc:
        raise TrainingDiverged(f"sequence {state.seen + 1}: {exc}") from None
    if not (math.isfinite(parts.total) and math.isfinite(score)):
        raise TrainingDiverged(f"sequence {state.seen + 1}: non-finite loss")
    if state.optimizer is not None:
        new = state.optimizer.update(model.parameters(), grads, 1, state.hp.clip_norm)
    else:
        new = sgd_update(model.parameters(), grads, state.hp.lr, 1, state.hp.clip_norm)
    model.load_parameters(new)
    loss = parts.one_class + state.fitness_alpha * parts.recon
    state.seen += 1
    state.window_sum += loss
    state.window_count += 1
    state.last_loss = loss
    return int(decide(score)), float(score), state


# ----------------------------------------------------------------------- PSO
@dataclass(frozen=True)
class SearchSpace:
    """Box bounds of the particle coordinates ``DIMENSIONS``."""

    log_alpha: tuple[float, float] = (0.0, 4.0)
    log_lam: tuple[float, float] = (-2.0, 1.0)
    log_lr: tuple[float, float] = (-5.0, -1.0)
    p: tuple[float, float] = (1.0, 32.0)
    tau: tuple[float, float] = (1.0, 12.0)

    @property
    def lower(self) -> np.ndarray:
        return np.array([getattr(self, d)[0] for d in DIMENSIONS])

    @property
    def upper(self) -> np.ndarray:
        return np.array([getattr(self, d)[1] for d in DIMENSIONS])

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


def encode_position(hp: Hyperparameters, space: SearchSpace) -> np.ndarray:
    lr = math.log10(hp.lr) if hp.lr > 0 else -math.inf
    return space.clamp(np.array([math.log10(hp.alpha), math.log10(hp.lam), lr, float(hp.p), float(hp.tau)]))


def decode_position(x: np.ndarray, base: Hyperparameters) -> Hyperparameters:
    return base.replace(alpha=float(10 ** x[0]), lam=float(10 ** x[1]), lr=float(10 ** x[2]),
                        p=max(1, int(round(x[3]))), tau=max(1, int(round(x[4]))))


@dataclass
class Particle:
    """One racing candidate.

    The particle keeps the hyperparameters it was created with until the
    swarm first moves it; afterwards they are decoded from ``position``.
    """

    state: OnlineState
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float = math.inf

    @classmethod
    def from_hp(cls, hp: Hyperparameters, space: SearchSpace = SearchSpace(),
                fitness_alpha: float | None = None) -> Particle:
        x = encode_position(hp, space)
        return cls(OnlineState(hp, fitness_alpha=fitness_alpha), x, np.zeros_like(x), x.copy())

    @property
    def hp(self) -> Hyperparameters:
        return self.state.hp


@dataclass
class RaceResult:
    """Outcome of :func:`pso_race`.

    Attributes:
        state: Committed learner (``committed`` is True).
        hp: Its hyperparameters.
        index: Index of the winning particle.
        fitness: Running loss of every particle at commit time.
        verdicts: One verdict per sequence processed during the race.
    """

    state: OnlineState
    hp: Hyperparameters
    index: int
    fitness: list[float]
    verdicts: list[Verdict] = field(default_factory=list)


def _leader(particles: Sequence[Particle], alive: Sequence[bool]) -> int:
    best = min((p.state.fitness, i) for i, p in enumerate(particles) if alive[i])
    return best[1]


def pso_race(particles: Sequence[Particle], stream: Iterable[IrregularSequence], n_samples: int, *,
             cadence: int = 20, inertia: float = 0.7, cognitive: float = 1.4, social: float = 1.4,
             space: SearchSpace = SearchSpace(), seed: int = 0) -> RaceResult:
    """Race ``particles`` on the first ``n_samples`` sequences of ``stream``.

    Every ``cadence`` sequences the swarm moves: personal and global bests are
    refreshed from the running losses, velocities follow the canonical
    update, positions are clamped to ``space`` and decoded, and running
    losses restart. ``cadence=0`` keeps every particle fixed (pure racing).
    Verdicts come from the particle with the lowest running loss before each
    sequence. A particle whose update diverges drops out of the race.

    Raises:
        OnlineError: Fewer than two particles or ``n_samples < 1``.
        TrainingDiverged: Every particle diverged.
    """
    if len(particles) < 2:
        raise OnlineError("racing needs at least two particles")
    if n_samples < 1:
        raise OnlineError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    alive = [True] * len(particles)
    verdicts: list[Verdict] = []
    gbest_pos, gbest_fit = None, math.inf
    count, dim = 0, None
    it = iter(stream)
    while count < n_samples:
        try:
            seq = next(it)
        except StopIteration:
            break
        check_sequence(seq, dim)
        dim = seq.dim
        lead = _leader(particles, alive)
        out = None
        for i, part in enumerate(particles):
            if not alive[i]:
                continue
            try:
                decision, score, _ = process_sequence(part.state, seq)
            except TrainingDiverged:
                alive[i] = False
                part.state.window_sum, part.state.window_count = math.inf, 1
                continue
            if i == lead:
                out = Verdict(seq.id, score, decision, count + 1, part.state.last_loss)
        if not any(alive):
            raise TrainingDiverged("every particle diverged")
        if out is None:
            lead = _leader(particles, alive)
            st = particles[lead].state
            out = Verdict(seq.id, math.nan, -1, count + 1, st.last_loss)
        verdicts.append(out)
        count += 1
        if cadence and count % cadence == 0 and count < n_samples:
            for i, part in enumerate(particles):
                fit = part.state.fitness if alive[i] else math.inf
                if fit < part.best_fitness:
                    part.best_fitness, part.best_position = fit, part.position.copy()
                if fit < gbest_fit:
                    gbest_fit, gbest_pos = fit, part.position.copy()
            for i, part in enumerate(particles):
                if not alive[i]:
                    continue
                r1, r2 = rng.random(len(DIMENSIONS)), rng.random(len(DIMENSIONS))
                part.velocity = (inertia * part.velocity
                                 + cognitive * r1 * (part.best_position - part.position)
                                 + social * r2 * (gbest_pos - part.position))
                part.position = space.clamp(part.position + part.velocity)
                part.state.retune(decode_position(part.position, part.hp))
                part.state.reset_window()
    if count == 0:
        raise OnlineError("the stream ended before any sequence arrived")
    fitness = [p.state.fitness if alive[i] else math.inf for i, p in enumerate(particles)]
    win = int(np.argmin(fitness))
    winner = particles[win].state
    winner.committed = True
    return RaceResult(winner, winner.hp, win, fitness, verdicts)


class run_stream:
    """Race ``hps`` (when more than one) and then keep learning on the rest of ``stream``.

    Iterating yields one verdict per sequence. Once the racing window is
    over, ``state`` holds the committed learner and ``race`` the race
    outcome (``None`` with a single candidate).
    """

    def __init__(self, hps: Sequence[Hyperparameters], stream: Iterable[IrregularSequence], *,
                 n_samples: int = 100, cadence: int = 20, seed: int = 0,
                 space: SearchSpace = SearchSpace()):
        if not hps:
            raise OnlineError("at least one hyperparameter set is required")
        self.hps, self.stream = list(hps), stream
        self.n_samples, self.cadence, self.seed, self.space = n_samples, cadence, seed, space
        self.state: OnlineState | None = None
        self.race: RaceResult | None = None

    def __iter__(self) -> Iterator[Verdict]:
        it = iter(self.stream)
        if len(self.hps) == 1:
            self.state = OnlineState(self.hps[0])
            self.state.committed = True
        else:
            particles = [Particle.from_hp(hp, self.space, self.hps[0].alpha) for hp in self.hps]
            head = []
            for seq in it:
                head.append(seq)
                if len(head) == self.n_samples:
                    break
            self.race = pso_race(particles, head, self.n_samples, cadence=self.cadence,
                                 seed=self.seed, space=self.space)
            self.state = self.race.state
            yield from self.race.verdicts
        for seq in it:
            decision, score, _ = process_sequence(self.state, seq)
            yield Verdict(seq.id, score, decision, self.state.seen, self.state.last_loss)
