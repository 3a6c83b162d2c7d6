import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irregad.decoder import DecoderParams, reconstruction_loss
from irregad.one_class import ClassifierParams, ocsvm_loss, svdd_loss
from irregad.recurrent_encoder import encode
from irregad.sequences import IrregularSequence
from irregad.trainer import (
    Adam,
    EarlyStopping,
    Hyperparameters,
    HyperparameterError,
    NonFiniteGradient,
    TrainingDiverged,
    clip_by_global_norm,
    combined_loss,
    rank_candidates,
    select_hyperparameters,
    sgd_update,
    train_offline,
    training_labels,
)

from conftest import random_model, random_sequence


def tiny_set(seed, n=10, K=5, M=2):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        t = np.arange(K, dtype=float)
        x = np.sin(0.6 * t[:, None] + rng.uniform(0, 6, size=M)) + 0.05 * rng.normal(size=(K, M))
        out.append(IrregularSequence(x, t, id=f"s{i}"))
    return out


# ------------------------------------------------------------ combined loss
def _oracle_parts(model, batch):
    pooled = [encode(model.encoder, s, model.pooling).pooled for s in batch]
    oc = svdd_loss(model.head, pooled) if model.head.kind == "SVDD" else ocsvm_loss(model.head, pooled)
    states = [encode(model.encoder, s).states for s in batch]
    return oc, reconstruction_loss(model.decoder, states, batch, model.recon_mode)


def test_alpha_zero_is_one_class_loss():
    rng = np.random.default_rng(0)
    model = random_model(rng)
    batch = [random_sequence(rng) for _ in range(3)]
    oc, _ = _oracle_parts(model, batch)
    got = combined_loss(model.encoder, model.decoder, model.head, batch, alpha=0.0)
    assert abs(got - oc) <= 1e-9


def test_perfect_reconstruction_leaves_one_class_loss():
    # p = M with an identity decoder and states equal to the samples is not
    # reachable by a cell, so the decoder ignores h and outputs the constant sample
    rng = np.random.default_rng(1)
    model = random_model(rng, p=3, M=2)
    x = np.array([0.4, -0.7])
    batch = [IrregularSequence(np.tile(x, (4, 1)), np.arange(4.0)) for _ in range(2)]
    model.decoder = DecoderParams.from_layers([(np.zeros((2, 3)), x.copy())])
    oc, recon = _oracle_parts(model, batch)
    assert recon == 0.0
    for alpha in (1.0, 1000.0):
        got = combined_loss(model.encoder, model.decoder, model.head, batch, alpha=alpha)
        assert abs(got - oc) <= 1e-9


@pytest.mark.parametrize("head", ["SVDD", "OCSVM"])
def test_combined_loss_composes_oracles(head):
    rng = np.random.default_rng(2)
    model = random_model(rng, head=head, pooling="mean")
    batch = [random_sequence(rng, K=k) for k in (3, 5, 6)]
    oc, recon = _oracle_parts(model, batch)
    got = combined_loss(model.encoder, model.decoder, model.head, batch, alpha=1000.0, pooling="mean")
    assert got == pytest.approx(oc + 1000.0 * recon, rel=1e-12)


def test_combined_loss_empty_batch():
    model = random_model(np.random.default_rng(3))
    with pytest.raises(ValueError):
        combined_loss(model.encoder, model.decoder, model.head, [])


# --------------------------------------------------------------- updates
def test_sgd_examples():
    assert sgd_update({"w": np.array(1.0)}, {"w": np.array(0.0)}, 0.1, 1)["w"] == 1.0
    assert sgd_update({"w": np.array(1.0)}, {"w": np.array(2.0)}, 0.1, 1)["w"] == pytest.approx(0.8)
    # two sequences with gradients 1 and 3 sum to 4; the step uses their mean 2
    assert sgd_update({"w": np.array(1.0)}, {"w": np.array(4.0)}, 0.1, 2)["w"] == pytest.approx(0.8)


def test_sgd_errors_name_the_tensor():
    with pytest.raises(NonFiniteGradient, match="encoder.W_fx"):
        sgd_update({"encoder.W_fx": np.zeros(2)}, {"encoder.W_fx": np.array([0.0, np.nan])}, 0.1, 1)
    with pytest.raises(KeyError):
        sgd_update({"a": np.zeros(1), "b": np.zeros(1)}, {"a": np.zeros(1)}, 0.1, 1)


def test_clipping():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_by_global_norm(g, 1.0)
    np.testing.assert_allclose([out["a"][0], out["b"][0]], [0.6, 0.8])
    assert clip_by_global_norm(g, 10.0)["a"][0] == 3.0
    assert clip_by_global_norm(g, 0.0)["b"][0] == 4.0


def test_adam_first_step_is_lr_times_sign():
    opt = Adam(0.01)
    out = opt.update({"w": np.array([1.0, 1.0])}, {"w": np.array([5.0, -0.2])}, 1)
    np.testing.assert_allclose(out["w"], [0.99, 1.01], atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_small_descent_step_does_not_increase_loss(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, variant=["M-LSTM", "A-LSTM", "D-LSTM", "M-GRU"][seed % 4],
                         head=["SVDD", "OCSVM"][seed % 2])
    batch = [random_sequence(rng) for _ in range(3)]
    parts, grads = model.loss_and_grad(batch)
    gnorm = math.sqrt(sum(float(np.sum((g / 3) ** 2)) for g in grads.values()))
    lr = 1e-3 / max(gnorm, 1.0)
    for mu in (lr, lr / 10):
        new = sgd_update(model.parameters(), grads, mu, len(batch))
        assert model.with_parameters(new).loss(batch).total <= parts.total + 1e-12


# ------------------------------------------------------- hyperparameters
def test_hyperparameter_validation():
    for bad in ({"p": 0}, {"tau": 0}, {"lam": 0.0}, {"alpha": 0.0}, {"beta": 0.0}, {"n_tol": 0},
                {"variant": "GRU"}, {"head": "OC-SVM"}, {"p": 2.5}, {"lr": -1.0}):
        with pytest.raises(HyperparameterError):
            Hyperparameters(**bad)
    with pytest.raises(HyperparameterError):
        Hyperparameters.from_dict({"learning_rate": 0.1})
    hp = Hyperparameters.from_dict({"lr": 1, "decay_cell": True})
    assert hp.lr == 1.0 and isinstance(hp.lr, float)
    assert Hyperparameters.from_dict(hp.to_dict()) == hp


def test_training_labels():
    seqs = [random_sequence(np.random.default_rng(0), label=lab) for lab in (-1, None, 1)]
    assert training_labels(seqs, "unsupervised") is None
    assert training_labels(seqs, "semi") == [-1, 0, 1]
    with pytest.raises(HyperparameterError):
        training_labels(seqs, "supervised")


# ---------------------------------------------------------------- training
def test_zero_epochs_returns_initial_model():
    hp = Hyperparameters(p=2, B=4, tau=2, n_epoch=0, seed=1)
    train, val = tiny_set(0), tiny_set(1, n=4)
    rep = train_offline(train, val, hp)
    again = train_offline(train, val, hp.replace(n_epoch=3))
    assert rep.stop_epoch == 0 and rep.best_epoch == 0 and len(rep.val_loss) == 1
    # the initial model of a longer run is the same
    assert rep.val_loss[0] == again.val_loss[0]


def test_training_reduces_loss():
    hp = Hyperparameters(p=2, B=5, tau=2, n_epoch=5, n_tol=5, seed=0, alpha=10.0, optimizer="adam", lr=0.01)
    rep = train_offline(tiny_set(0), tiny_set(1, n=4), hp)
    assert rep.train_loss[5] < rep.train_loss[0]


def _adversarial_split(n=12, K=6):
    # validation samples sit on the opposite side of the origin, so fitting the
    # training reconstructions pushes the validation error up every epoch
    t = np.arange(K, dtype=float)
    train = [IrregularSequence(np.full((K, 1), 1.0), t, id=f"tr{i}") for i in range(n)]
    val = [IrregularSequence(np.full((K, 1), -1.0), t, id=f"va{i}") for i in range(n // 2)]
    return train, val


def test_patience_arithmetic():
    stop = EarlyStopping(3)
    assert [stop.update(e, v) for e, v in enumerate([1.0, 2.0, 3.0, 4.0], start=1)] == [False, False, False, True]
    stop = EarlyStopping(2)
    assert [stop.update(e, v) for e, v in enumerate([3.0, 2.0, 2.5, 1.0, 1.5, 1.6], start=1)] == \
        [False, False, False, False, False, True]
    with pytest.raises(ValueError):
        EarlyStopping(0)


def test_rising_validation_stops_at_one_plus_patience():
    train, val = _adversarial_split()
    hp = Hyperparameters(p=2, B=4, tau=2, n_epoch=50, n_tol=3, seed=0, optimizer="adam", lr=0.05, alpha=1000.0)
    rep = train_offline(train, val, hp)
    assert all(b > a for a, b in zip(rep.val_loss[1:], rep.val_loss[2:]))
    assert rep.stop_epoch == 4 and rep.stopped_early
    assert len(rep.val_loss) == 5


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 1000), n_tol=st.integers(1, 3))
def test_returned_checkpoint_is_best_seen(seed, n_tol):
    hp = Hyperparameters(p=2, B=4, tau=2, n_epoch=6, n_tol=n_tol, seed=seed, optimizer="adam", lr=0.02,
                         alpha=10.0)
    val = tiny_set(seed + 1, n=4)
    rep = train_offline(tiny_set(seed), val, hp)
    assert rep.best_val_loss == min(rep.val_loss)
    assert rep.model.loss(val).total == rep.best_val_loss


def test_training_is_bit_reproducible():
    hp = Hyperparameters(p=2, B=3, tau=2, n_epoch=3, seed=5, variant="D-LSTM")
    a = train_offline(tiny_set(0), tiny_set(1, n=3), hp)
    b = train_offline(tiny_set(0), tiny_set(1, n=3), hp)
    assert a.train_loss == b.train_loss and a.val_loss == b.val_loss
    for k, v in a.model.parameters().items():
        assert v.tobytes() == b.model.parameters()[k].tobytes()


def test_encoder_does_not_collapse():
    hp = Hyperparameters(p=3, B=5, tau=2, n_epoch=5, seed=0, alpha=1000.0, optimizer="adam", lr=0.01)
    rep = train_offline(tiny_set(0, n=15), tiny_set(1, n=5), hp)
    assert max(float(np.max(np.abs(v))) for v in rep.model.encoder.weights.values()) > 1e-3


def test_divergence_is_reported():
    seqs = [IrregularSequence([[1e300], [-1e300]], [0.0, 1.0]) for _ in range(3)]
    with pytest.raises(TrainingDiverged):
        train_offline(seqs, seqs, Hyperparameters(p=2, tau=2, n_epoch=2))


def test_empty_sets_rejected():
    with pytest.raises(ValueError):
        train_offline([], tiny_set(0), Hyperparameters())


def test_semi_supervised_training_runs():
    train = [s.replace(label=(-1 if i % 3 else None)) for i, s in enumerate(tiny_set(0))]
    hp = Hyperparameters(p=2, B=5, tau=2, n_epoch=2, mode="semi", nu=0.5)
    rep = train_offline(train, tiny_set(1, n=3), hp)
    assert math.isfinite(rep.best_val_loss)


# --------------------------------------------------------------- selection
def test_single_candidate_is_returned():
    hp = Hyperparameters(p=2, B=5, tau=2, n_epoch=1)
    res = select_hyperparameters([hp], tiny_set(0), tiny_set(1, n=3))
    assert res.best is hp and res.ranking == [0]


def test_diverging_candidate_loses():
    train = tiny_set(0)
    train[0] = IrregularSequence(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [0.0, 1.0], [1.0, 0.0]]),
                                 np.arange(5.0))
    good = Hyperparameters(p=2, B=5, tau=2, n_epoch=2)
    bad = good.replace(lr=1e300, clip_norm=0.0, seed=1)
    res = select_hyperparameters([bad, good], train, tiny_set(1, n=3))
    assert res.best is good
    assert res.reports[0] is None and 0 in res.errors


def test_lambda_grid_matches_rank_oracle():
    base = Hyperparameters(p=2, B=5, tau=2, n_epoch=2, optimizer="adam", lr=0.01)
    cands = [base.replace(lam=0.3), base.replace(lam=0.4)]
    res = select_hyperparameters(cands, tiny_set(0), tiny_set(1, n=4))
    oracle = min(range(2), key=lambda i: (res.reports[i].best_val_loss, i))
    assert res.best == cands[oracle]


class _Rep:
    def __init__(self, loss, recon):
        self.best_val_loss, self.best_val_recon = loss, recon


def test_rank_ties_and_alpha_groups():
    base = Hyperparameters()
    cands = [base.replace(p=8), base.replace(p=4), base.replace(p=4, B=16),
             base.replace(p=2, alpha=10.0), base.replace(p=2, alpha=1000.0)]
    reps = [_Rep(1.0, 0.5), _Rep(1.0, 0.5), _Rep(1.0, 0.5), _Rep(0.1, 0.9), _Rep(5.0, 0.2)]
    # alpha group {3, 4}: 4 wins on reconstruction even though its joint loss is higher
    assert rank_candidates(cands, reps) == [2, 1, 0, 4]
    assert rank_candidates(cands, [None] * 5) == []
    with pytest.raises(ValueError):
        select_hyperparameters([], [], [])
