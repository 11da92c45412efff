import numpy as np
import pytest

from chunkvote.action_core import NormalizationStats
from chunkvote.errors import InvalidDims, NoActToken, ShapeMismatch
from chunkvote.head import init_params
from chunkvote.policy import (
    HiddenReplay,
    HiddenSequence,
    PassCounter,
    PseudoBackbone,
    extract_act_hidden,
    predict_chunk,
    pseudo_backbone,
    serial_decode_baseline,
)

OBS = np.linspace(-1, 1, 8)
INSTR = [3, 1, 4, 1, 5]


def test_extract_single_and_order():
    hidden = np.arange(20.0).reshape(5, 4)
    out = extract_act_hidden(HiddenSequence(hidden, [0, 0, 0, 0, 1]))
    assert len(out) == 1 and np.array_equal(out[0], hidden[4])
    out = extract_act_hidden(HiddenSequence(hidden, [0, 1, 0, 1, 0]))
    assert [o[0] for o in out] == [4.0, 12.0]
    with pytest.raises(NoActToken):
        extract_act_hidden(HiddenSequence(hidden, np.zeros(5)))
    with pytest.raises(ShapeMismatch):
        HiddenSequence(hidden, np.zeros(4))


def test_backbone_deterministic_and_counts():
    c1, c2 = PassCounter(), PassCounter()
    a = pseudo_backbone(OBS, INSTR, seed=3, H=16, counter=c1)
    b = pseudo_backbone(OBS, INSTR, seed=3, H=16, counter=c2)
    assert np.array_equal(a.hidden, b.hidden) and np.array_equal(a.act_mask, b.act_mask)
    assert c1.decoder_forward_passes == 1
    assert a.act_mask[-1] and a.act_mask.sum() == 1
    two = pseudo_backbone(OBS, INSTR, seed=3, H=16, n_act=2)
    assert list(np.flatnonzero(two.act_mask)) == [len(INSTR), len(INSTR) + 1]


@pytest.mark.parametrize("N,A,expected", [(8, 7, 56), (1, 1, 1), (16, 7, 112)])
def test_serial_baseline(N, A, expected):
    c = PassCounter()
    assert serial_decode_baseline(OBS, INSTR, N, A, counter=c) == expected
    assert c.decoder_forward_passes == expected
    with pytest.raises(InvalidDims):
        serial_decode_baseline(OBS, INSTR, 0, A)


@pytest.mark.parametrize("tokens", [1, 2])
def test_predict_chunk_length_and_passes(tokens):
    head = init_params(32, 8, 7, seed=0)
    bb = PseudoBackbone(32, obs_dim=8, seed=0, work_layers=1)
    c = PassCounter()
    chunk = predict_chunk(OBS, INSTR, head, tokens=tokens, backbone=bb, counter=c)
    assert chunk.size == 8 * tokens
    assert c.decoder_forward_passes == tokens
    again = predict_chunk(OBS, INSTR, head, tokens=tokens, backbone=bb)
    assert np.array_equal(chunk.actions, again.actions)


def test_predict_denormalizes():
    head = init_params(16, 4, 7, seed=1)
    stats = NormalizationStats(-2 * np.ones(6), 2 * np.ones(6))
    chunk = predict_chunk(OBS, INSTR, head, stats=stats, origin_step=5)
    assert chunk.origin_step == 5
    assert np.all(np.abs(chunk.actions[:, :6]) <= 2) and set(chunk.actions[:, 6]) <= {0.0, 1.0}


def test_width_mismatch():
    with pytest.raises(ShapeMismatch):
        predict_chunk(OBS, INSTR, init_params(16, 2, 7), backbone=PseudoBackbone(32, obs_dim=8))


def test_replay_roundtrip(tmp_path):
    r = np.random.default_rng(0)
    head = init_params(16, 2, 7, seed=0)
    rep = HiddenReplay({"h_act/0": r.standard_normal((1, 16)), "h_act/3": r.standard_normal((2, 16))},
                       {"source": "test"})
    rep.save(tmp_path / "r.bin")
    back = HiddenReplay.load(tmp_path / "r.bin")
    assert sorted(back.steps) == [0, 3] and back.meta["source"] == "test"
    assert back.predict(3, head).size == 4
    np.testing.assert_array_equal(back[0], rep[0].astype(np.float32))
