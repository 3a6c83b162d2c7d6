import json

import numpy as np
import pytest

from irregad.checkpoint import (
    FORMAT,
    Checkpoint,
    CheckpointError,
    dumps,
    load_checkpoint,
    loads,
    save_checkpoint,
)
from irregad.recurrent_encoder import VARIANTS
from irregad.trainer import Hyperparameters

from conftest import random_model, random_sequence


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("head", ["SVDD", "OCSVM"])
def test_round_trip_is_bit_exact(variant, head, tmp_path):
    rng = np.random.default_rng(0)
    model = random_model(rng, variant=variant, head=head, pooling="mean", recon_mode="predict", alpha=0.1 + 1 / 3)
    # values whose decimal form is long
    model.encoder.weights[next(iter(model.encoder.weights))].flat[0] = np.nextafter(1 / 3, 1)
    ckpt = Checkpoint(model, Hyperparameters(variant=variant, head=head), epoch=7,
                      rng_state=rng.bit_generator.state, extra={"k": "v"})
    back = load_checkpoint(save_checkpoint(tmp_path / "c.json", ckpt))
    for k, v in model.parameters().items():
        got = back.model.parameters()[k]
        assert got.shape == v.shape and got.tobytes() == v.tobytes(), k
    assert back.hp == ckpt.hp and back.epoch == 7 and back.extra == {"k": "v"}
    assert back.rng_state == json.loads(json.dumps(ckpt.rng_state))
    assert back.model.alpha == model.alpha and back.model.pooling == "mean"
    assert back.model.encoder.config() == model.encoder.config()
    seq = random_sequence(rng)
    assert back.model.score(seq) == model.score(seq)


def test_dumps_is_deterministic():
    model = random_model(np.random.default_rng(1))
    assert dumps(Checkpoint(model)) == dumps(Checkpoint(model.copy()))


def test_shapes_are_explicit():
    doc = json.loads(dumps(Checkpoint(random_model(np.random.default_rng(2), p=3, M=2))))
    assert doc["format"] == FORMAT
    assert doc["model"]["encoder"]["weights"]["W_fx"]["shape"] == [3, 2]


def test_load_errors(tmp_path):
    with pytest.raises(CheckpointError):
        loads("not json")
    with pytest.raises(CheckpointError):
        loads(json.dumps({"format": "other/9"}))
    doc = json.loads(dumps(Checkpoint(random_model(np.random.default_rng(3)))))
    doc["model"]["decoder"]["weights"]["W_1"]["shape"] = [99, 1]
    with pytest.raises(CheckpointError, match="W_1"):
        loads(json.dumps(doc))
    del doc["model"]["head"]
    with pytest.raises(CheckpointError):
        loads(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.json")
