import math

import numpy as np
import pytest

from evsentinel.data import BehaviorSequence
from evsentinel.errors import ContractError, ShapeError
from evsentinel.evidential import taped_evidential_loss
from evsentinel.model import (
    DropoutSpec,
    EncoderParams,
    EvidentialHeadParams,
    GruLayerParams,
    encode,
    encode_batch,
    encode_features,
    head,
    init_encoder,
    init_head,
    leaf_params,
    taped_encode,
    taped_head,
)
from evsentinel.numerics import SeededRng, Tape, backward


def zero_encoder(d, k, layers=2):
    return EncoderParams(layers=[
        GruLayerParams(
            w={g: np.zeros((d if i == 0 else k, k)) for g in "rzc"},
            u={g: np.zeros((k, k)) for g in "rzc"},
            b={g: np.zeros(k) for g in "rzc"},
        )
        for i in range(layers)
    ])


def scalar_encoder(wr, wz, wc, ur, uz, uc, br, bz, bc):
    return EncoderParams(layers=[GruLayerParams(
        w={"r": np.array([[wr]]), "z": np.array([[wz]]), "c": np.array([[wc]])},
        u={"r": np.array([[ur]]), "z": np.array([[uz]]), "c": np.array([[uc]])},
        b={"r": np.array([br]), "z": np.array([bz]), "c": np.array([bc])},
    )])


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_zero_params_give_zero_embedding():
    params = zero_encoder(3, 4)
    x = SeededRng(1).normal((7, 3))
    z = encode_features(params, x)
    assert np.array_equal(z, np.zeros(4))


def test_single_unit_single_step_matches_hand_computation():
    wr, wz, wc = 0.8, -0.4, 1.2
    ur, uz, uc = 0.3, 0.2, -0.5
    br, bz, bc = 0.1, -0.2, 0.05
    params = scalar_encoder(wr, wz, wc, ur, uz, uc, br, bz, bc)
    x = 0.5

    # hand-evaluated standard GRU step from h = 0
    z_gate = sigmoid(x * wz + bz)
    c = math.tanh(x * wc + bc)  # r * h term vanishes at h = 0
    expected = z_gate * c

    got = encode_features(params, np.array([[x]]))
    assert got[0] == pytest.approx(expected, abs=1e-15)


def test_single_unit_two_steps_matches_hand_computation():
    wr, wz, wc = 0.8, -0.4, 1.2
    ur, uz, uc = 0.3, 0.2, -0.5
    br, bz, bc = 0.1, -0.2, 0.05
    params = scalar_encoder(wr, wz, wc, ur, uz, uc, br, bz, bc)
    xs = [0.5, -1.0]

    h = 0.0
    for x in xs:
        r = sigmoid(x * wr + h * ur + br)
        z = sigmoid(x * wz + h * uz + bz)
        c = math.tanh(x * wc + r * h * uc + bc)
        h = (1.0 - z) * h + z * c

    got = encode_features(params, np.array(xs).reshape(2, 1))
    assert got[0] == pytest.approx(h, abs=1e-15)


def test_encode_deterministic_without_dropout():
    rng = SeededRng(3)
    params = init_encoder(3, 5, 2, rng)
    x = SeededRng(4).normal((9, 3))
    a = encode_features(params, x)
    b = encode_features(params, x)
    assert a.tobytes() == b.tobytes()


def test_dropout_deterministic_given_rng_and_ignored_when_off():
    params = init_encoder(3, 5, 2, SeededRng(5))
    x = SeededRng(6).normal((9, 3))
    spec = DropoutSpec(p=0.3, active=True)
    a = encode_features(params, x, dropout=spec, rng=SeededRng(77))
    b = encode_features(params, x, dropout=spec, rng=SeededRng(77))
    c = encode_features(params, x, dropout=spec, rng=SeededRng(78))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)
    # inactive dropout must not consume or depend on the rng
    off1 = encode_features(params, x, dropout=DropoutSpec(p=0.3, active=False), rng=SeededRng(1))
    off2 = encode_features(params, x, dropout=DropoutSpec(p=0.3, active=False), rng=None)
    assert off1.tobytes() == off2.tobytes()


def test_active_dropout_requires_rng():
    params = init_encoder(2, 3, 2, SeededRng(1))
    with pytest.raises(ContractError):
        encode_features(params, np.zeros((4, 2)), dropout=DropoutSpec(p=0.3, active=True))


def test_dropout_spec_validation():
    with pytest.raises(ContractError):
        DropoutSpec(p=1.0)
    with pytest.raises(ContractError):
        DropoutSpec(p=-0.1)


def test_width_mismatch_raises_shape_error():
    params = init_encoder(3, 4, 2, SeededRng(1))
    with pytest.raises(ShapeError):
        encode_features(params, np.zeros((5, 2)))


def test_empty_sequence_rejected():
    params = init_encoder(3, 4, 2, SeededRng(1))
    with pytest.raises(ContractError):
        encode_features(params, np.zeros((0, 3)))
    with pytest.raises(ContractError):
        encode_features(params, np.zeros((4, 3)), n_steps=0)


def test_trailing_padding_never_processed_with_length_metadata():
    params = init_encoder(3, 4, 2, SeededRng(9))
    real = SeededRng(10).normal((6, 3))
    padded = np.vstack([real, np.zeros((5, 3))])
    a = encode_features(params, padded, n_steps=6)
    b = encode_features(params, real)
    assert a.tobytes() == b.tobytes()
    # garbage beyond the declared length must be invisible
    noisy = np.vstack([real, SeededRng(11).normal((5, 3))])
    c = encode_features(params, noisy, n_steps=6)
    assert c.tobytes() == b.tobytes()


def test_encode_behavior_sequence_wrapper():
    params = init_encoder(12, 4, 2, SeededRng(11))
    seq = BehaviorSequence(user="u0001", features=SeededRng(12).normal((10, 12)),
                           window_duration=3600.0, window_end=36_000.0)
    emb = encode(params, seq)
    assert emb.user == "u0001"
    assert emb.values.shape == (4,)


def test_encode_batch_matches_single_encodes():
    params = init_encoder(4, 6, 2, SeededRng(13))
    stack = SeededRng(14).normal((5, 8, 4))
    batch = encode_batch(params, stack)
    for i in range(5):
        single = encode_features(params, stack[i])
        assert np.allclose(batch[i], single, atol=1e-12)


# -- evidential head -----------------------------------------------------------


def test_head_zero_params_gives_ln2_plus_one():
    params = EvidentialHeadParams(w=np.zeros((4, 5)), b=np.zeros(5))
    a = head(params, np.ones(4))
    assert np.allclose(a.alpha, math.log(2.0) + 1.0, atol=1e-12)


def test_head_alpha_always_above_one():
    rng = SeededRng(15)
    params = init_head(6, 5, rng)
    for _ in range(50):
        a = head(params, 10.0 * rng.normal((6,)))
        assert np.all(a.alpha > 1.0)
        assert 0.0 < a.uncertainty <= 1.0


def test_head_hand_set_two_cluster():
    params = EvidentialHeadParams(w=np.array([[2.0, -2.0]]), b=np.zeros(2))
    a = head(params, np.array([1.0]))
    expected = np.array([math.log1p(math.exp(2.0)) + 1.0,
                         math.log1p(math.exp(-2.0)) + 1.0])
    assert np.allclose(a.alpha, expected, atol=1e-12)
    assert a.alpha[0] == pytest.approx(3.1269, abs=1e-4)
    assert a.alpha[1] == pytest.approx(1.1269, abs=1e-4)


def test_head_length_mismatch():
    params = init_head(6, 5, SeededRng(16))
    with pytest.raises(ShapeError):
        head(params, np.ones(4))


# -- gradients through the composed model ---------------------------------------


def tiny_setup():
    rng = SeededRng(17)
    enc = init_encoder(3, 4, 2, rng)
    hd = init_head(4, 3, rng)
    x = SeededRng(18).normal((2, 5, 3))
    y = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    return enc, hd, x, y


def loss_given_flat(flat, x, y, n_layers=2, lam=0.4):
    tape = Tape()
    pnodes = {name: tape.leaf(arr) for name, arr in flat.items()}
    z = taped_encode(tape, pnodes, x, n_layers, DropoutSpec(active=False), None)
    alpha = taped_head(tape, pnodes, z)
    total, _, _ = taped_evidential_loss(tape, alpha, y, lam)
    return tape, pnodes, total


def test_full_model_gradient_matches_finite_differences():
    enc, hd, x, y = tiny_setup()
    flat = {**enc.to_flat(), **hd.to_flat()}
    tape, pnodes, total = loss_given_flat(flat, x, y)
    grads = backward(tape, total)

    h = 1e-5
    for name in ("enc.l0.w_c", "enc.l1.u_z", "enc.l0.b_r", "head.w", "head.b"):
        base = flat[name]
        analytic = grads[pnodes[name]]
        it = np.nditer(base, flags=["multi_index"])
        checked = 0
        for _ in it:
            idx = it.multi_index
            up = {k: (v.copy() if k == name else v) for k, v in flat.items()}
            dn = {k: (v.copy() if k == name else v) for k, v in flat.items()}
            up[name][idx] += h
            dn[name][idx] -= h
            _, _, t_up = loss_given_flat(up, x, y)
            _, _, t_dn = loss_given_flat(dn, x, y)
            numeric = (float(t_up.value) - float(t_dn.value)) / (2 * h)
            # floor keeps central-difference noise out of vanishing gradients
            rel = abs(analytic[idx] - numeric) / max(abs(numeric), 1e-6)
            assert rel < 1e-4, f"{name}[{idx}]: {analytic[idx]} vs {numeric}"
            checked += 1
            if checked >= 6:
                break


def test_taped_encode_matches_inference_encode():
    enc, hd, x, _ = tiny_setup()
    tape = Tape()
    pnodes = leaf_params(tape, enc, hd)
    z = taped_encode(tape, pnodes, x, 2, DropoutSpec(active=False), None)
    plain = encode_batch(enc, x)
    assert np.allclose(z.value, plain, atol=1e-12)
