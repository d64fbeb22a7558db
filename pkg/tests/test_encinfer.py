import inspect
import random

import numpy as np
import pytest

from cryptoeeg import encinfer as ei
from cryptoeeg import network as nw
from cryptoeeg import paillier
from cryptoeeg.fixedpoint import EncodingOverflowError, FixedPointCodec
from cryptoeeg.paillier import Ciphertext, ScaleMismatchError


def int_forward_oracle(qm, x_q):
    """Quantized forward pass with numpy object (arbitrary precision) arrays."""
    W1 = np.array(qm.qW1, dtype=object)
    W2 = np.array(qm.qW2, dtype=object)
    h = np.array(x_q, dtype=object).dot(W1) + np.array(qm.qb1, dtype=object)
    a = h * qm.q_act_slope + qm.q_act_intercept
    return [int(v) for v in a.dot(W2) + np.array(qm.qb2, dtype=object)]


def enc_ints(pk, values, level, rng):
    return ei.EncryptedVector(tuple(
        Ciphertext(paillier.encrypt(pk, v % pk.n, rng).value, level) for v in values))


@pytest.fixture
def codec512(keys512):
    return FixedPointCodec(10, keys512[0].n)


class TestEncryptSample:
    def test_round_trip(self, keys512, codec512, rng):
        pk, sk = keys512
        x = np.random.default_rng(0).uniform(0, 1, 44)
        v = ei.encrypt_sample(pk, codec512, x, rng)
        assert v.level == 1 and v.width == 44
        back = [codec512.decode(paillier.decrypt(sk, c), 1) for c in v.cts]
        assert np.max(np.abs(np.array(back) - x)) <= 2.0 ** -11

    def test_zero_vector(self, keys512, codec512, rng):
        pk, sk = keys512
        v = ei.encrypt_sample(pk, codec512, np.zeros(5), rng)
        assert [paillier.decrypt(sk, c) for c in v.cts] == [0] * 5

    def test_probabilistic(self, keys512, codec512, rng):
        pk, _ = keys512
        x = np.full(10, 0.25)
        a = ei.encrypt_sample(pk, codec512, x, rng)
        b = ei.encrypt_sample(pk, codec512, x, rng)
        assert all(ca.value != cb.value for ca, cb in zip(a.cts, b.cts))


class TestWeightedSum:
    def test_scaled_identity(self, keys256, rng):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        x = [0.5, -0.25, 0.75]
        W = [[1024 if i == j else 0 for j in range(3)] for i in range(3)]
        out = ei.enc_weighted_sum(pk, W, [0, 0, 0], ei.encrypt_sample(pk, codec, x, rng))
        assert out.level == 2
        assert [codec.decode(paillier.decrypt(sk, c), 2) for c in out.cts] == x

    def test_zero_weights_bias_only(self, keys256, rng):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        b = [0.125, -3.5]
        v = ei.encrypt_sample(pk, codec, [0.3, 0.9, 0.1], rng)
        out = ei.enc_weighted_sum(pk, [[0, 0]] * 3, [codec.quantize(x, 2) for x in b], v)
        assert [codec.decode(paillier.decrypt(sk, c), 2) for c in out.cts] == b

    def test_random_integer_oracle(self, keys256, rng):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        g = np.random.default_rng(0)
        for _ in range(10):
            W = g.integers(-5000, 5000, (5, 3)).tolist()
            b = g.integers(-10**7, 10**7, 3).tolist()
            x = g.integers(-2000, 2000, 5).tolist()
            out = ei.enc_weighted_sum(pk, W, b, enc_ints(pk, x, 1, rng))
            expect = [sum(x[i] * W[i][j] for i in range(5)) + b[j] for j in range(3)]
            assert ei.decrypt_vector(sk, codec, out) == expect

    def test_dimension_mismatch(self, keys256, rng):
        pk, _ = keys256
        with pytest.raises(ValueError):
            ei.enc_weighted_sum(pk, [[1]] * 2, [0], enc_ints(pk, [1, 2, 3], 1, rng))


class TestActivation:
    def test_fixed_points(self, keys256, rng):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        slope, icpt = codec.quantize(0.238, 1), codec.quantize(0.5, 3)
        v = enc_ints(pk, [0, codec.quantize(1.0, 2)], 2, rng)
        out = ei.enc_activation(pk, v, slope, icpt)
        got = [codec.decode(paillier.decrypt(sk, c), 3) for c in out.cts]
        assert got[0] == 0.5
        assert abs(got[1] - 0.738) <= 2.0 ** -10

    def test_integer_oracle(self, keys256, rng):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        slope, icpt = 244, 1 << 29
        vals = [rng.randrange(-(1 << 24), 1 << 24) for _ in range(1000)]
        out = ei.enc_activation(pk, enc_ints(pk, vals, 2, rng), slope, icpt)
        assert ei.decrypt_vector(sk, codec, out) == [slope * v + icpt for v in vals]

    def test_level_check(self, keys256, rng):
        pk, _ = keys256
        with pytest.raises(ScaleMismatchError):
            ei.enc_activation(pk, enc_ints(pk, [1], 1, rng), 244, 1 << 29)


class TestForward:
    def test_zero_model(self, keys256, rng):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        qm = ei.QuantizedModel.from_arrays(np.zeros((4, 3)), np.zeros(3), np.zeros((3, 2)), np.zeros(2), 10)
        out = ei.enc_forward(pk, qm, ei.encrypt_sample(pk, codec, [0.2, 0.4, 0.6, 0.8], rng))
        assert out.level == 4
        assert [codec.decode(paillier.decrypt(sk, c), 4) for c in out.cts] == [0.0, 0.0]

    def test_small_model_two_oracles(self, keys512, codec512, rng):
        pk, sk = keys512
        model = nw.init_model(6, 4, 3, nw.LINEAR_APPROX, seed=5)
        model.b1[:] = [0.1, -0.2, 0.3, 0.05]
        model.b2[:] = [0.01, 0.0, -0.02]
        qm = model.export(10)
        X = np.random.default_rng(2).uniform(0, 1, (50, 6))
        margin_checked = 0
        for x in X:
            v = ei.encrypt_sample(pk, codec512, x, rng)
            logits = ei.enc_forward(pk, qm, v)
            x_q = [codec512.quantize(xi, 1) for xi in x]
            assert ei.decrypt_vector(sk, codec512, logits) == int_forward_oracle(qm, x_q)
            real = model.forward(x)[0]
            bound = ei.logit_error_bound(model.W1, model.b1, model.W2, model.b2, qm, x)
            decoded, cls = ei.decrypt_logits(sk, codec512, logits)
            assert np.all(np.abs(np.array(decoded) - real) <= bound)
            top = np.sort(real)
            if top[-1] - top[-2] > 2 * bound.max():
                margin_checked += 1
                assert cls == int(np.argmax(real)) + 1
        assert margin_checked > 25

    def test_public_key_only(self, keys256, rng, monkeypatch):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        qm = nw.init_model(3, 2, 2, seed=1).export(10)
        v = ei.encrypt_sample(pk, codec, [0.1, 0.2, 0.3], rng)

        def forbidden(*a, **k):
            raise AssertionError("decryption reached from the inference path")

        monkeypatch.setattr(paillier, "decrypt", forbidden)
        monkeypatch.setattr(paillier, "decrypt_direct", forbidden)
        out = ei.enc_forward(pk, qm, v)
        monkeypatch.undo()
        assert ei.decrypt_vector(sk, codec, out) == ei.plain_forward_int(qm, [codec.quantize(x, 1) for x in (0.1, 0.2, 0.3)])
        for fn in (ei.enc_forward, ei.enc_weighted_sum, ei.enc_activation, ei.enc_forward_batch):
            assert "PrivateKey" not in str(inspect.signature(fn))

    def test_batch_workers_identical(self, keys256, rng):
        pk, _ = keys256
        codec = FixedPointCodec(10, pk.n)
        qm = nw.init_model(5, 3, 2, seed=1).export(10)
        vs = [ei.encrypt_sample(pk, codec, np.full(5, i / 10), rng) for i in range(6)]
        assert ei.enc_forward_batch(pk, qm, vs, 1) == ei.enc_forward_batch(pk, qm, vs, 2)

    def test_level_and_width_checks(self, keys256, rng):
        pk, _ = keys256
        qm = nw.init_model(3, 2, 2).export(10)
        with pytest.raises(ScaleMismatchError):
            ei.enc_forward(pk, qm, enc_ints(pk, [1, 2, 3], 2, rng))
        with pytest.raises(ValueError):
            ei.enc_forward(pk, qm, enc_ints(pk, [1, 2], 1, rng))


class TestDecryptLogits:
    def test_class_selection(self, keys256, rng):
        pk, sk = keys256
        codec = FixedPointCodec(10, pk.n)
        one = codec.quantize(1.0, 4)
        _, cls = ei.decrypt_logits(sk, codec, enc_ints(pk, [one, 0, 0, 0], 4, rng))
        assert cls == 1
        _, cls = ei.decrypt_logits(sk, codec, enc_ints(pk, [-5, -5, -5, -5], 4, rng))
        assert cls == 1
        vals, cls = ei.decrypt_logits(sk, codec, enc_ints(pk, [-one, 0, one // 2, -1], 4, rng))
        assert cls == 3 and vals == [-1.0, 0.0, 0.5, -1 / 2**40]

    def test_requires_level_4(self, keys256, rng):
        pk, sk = keys256
        with pytest.raises(ScaleMismatchError):
            ei.decrypt_logits(sk, FixedPointCodec(10, pk.n), enc_ints(pk, [1], 3, rng))


class TestAudit:
    def test_44_20_4_configuration_fits_512_bits(self, keys512):
        qm = nw.init_model(44, 20, 4, seed=0).export(10)
        bounds = qm.audit(keys512[0].n)
        assert bounds[4].bit_length() < 80

    def test_overflow_refused(self):
        # level-4 values need > 80 bits at frac_bits=20
        qm = nw.init_model(44, 20, 4, seed=0).export(20)
        pk, _ = paillier.keygen(64, random.Random(1))
        with pytest.raises(EncodingOverflowError):
            qm.audit(pk.n)

    def test_bounds_hold_for_extreme_inputs(self, keys256):
        qm = nw.init_model(6, 3, 2, seed=2).export(10)
        b = qm.worst_case_bounds()
        for x in np.random.default_rng(0).choice([0.0, 1.0], (50, 6)):
            out = ei.plain_forward_int(qm, [int(v) * 1024 for v in x])
            assert max(abs(v) for v in out) <= b[4]


class TestRecords:
    def test_round_trip(self, keys256, rng, tmp_path):
        pk, _ = keys256
        vs = [enc_ints(pk, [1, 2, 3], 1, rng), enc_ints(pk, [4, 5, 6], 1, rng)]
        ei.write_records(tmp_path / "r.jsonl", vs, 10)
        back = ei.read_records(tmp_path / "r.jsonl")
        assert [v for v, _ in back] == vs and {fb for _, fb in back} == {10}

    def test_malformed_names_record(self, keys256, rng, tmp_path):
        pk, _ = keys256
        ei.write_records(tmp_path / "r.jsonl", [enc_ints(pk, [1], 1, rng)], 10)
        with open(tmp_path / "r.jsonl", "a") as fh:
            fh.write('{"version": 1, "scale_level": 1, "frac_bits": 10, "width": 2, "values": ["ff"]}\n')
        with pytest.raises(ei.RecordFormatError, match="record 2"):
            ei.read_records(tmp_path / "r.jsonl")

    def test_version_required(self):
        with pytest.raises(ei.RecordFormatError):
            ei.record_to_vector({"scale_level": 1, "width": 0, "values": [], "frac_bits": 10})

    def test_model_dict_round_trip(self):
        qm = nw.init_model(4, 3, 2, seed=3).export(12)
        assert ei.QuantizedModel.from_dict(qm.to_dict()) == qm


def test_homomorphic_fixed_point_sum(keys256, rng):
    pk, sk = keys256
    codec = FixedPointCodec(10, pk.n)
    g = np.random.default_rng(4)
    for x, y in g.uniform(-100, 100, (200, 2)):
        s = paillier.add_ct(pk, paillier.encrypt(pk, codec.encode(x), rng), paillier.encrypt(pk, codec.encode(y), rng))
        assert abs(codec.decode(paillier.decrypt(sk, s)) - (x + y)) <= 2.0 ** -10
