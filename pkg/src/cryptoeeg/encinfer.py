"""Inference of a quantized one-hidden-layer network over Paillier ciphertexts.

Scale levels compose as: input 1 -> layer-1 sum 2 -> activation 3 -> logits 4.
Every homomorphic step is exact integer arithmetic mod n, so decrypting the
logits gives bit-for-bit the result of `plain_forward_int` provided the
magnitude audit passes. Nothing reachable from `enc_forward` touches a
private key.
"""
from __future__ import annotations

import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import paillier
from .fixedpoint import EncodingOverflowError, FixedPointCodec, quantize
from .paillier import Ciphertext, PrivateKey, PublicKey, ScaleMismatchError

ACT_SLOPE = 0.238
ACT_INTERCEPT = 0.5

LEVEL_INPUT = 1
LEVEL_HIDDEN = 2
LEVEL_ACTIVATION = 3
LEVEL_LOGITS = 4

RECORD_VERSION = 1


class RecordFormatError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizedModel:
    """Signed fixed-point images of the network parameters.

    qW1, qW2 and the slope are at level 1; qb1 at level 2; the intercept at
    level 3; qb2 at level 4.
    """

    n_i: int
    n_d: int
    n_o: int
    frac_bits: int
    qW1: tuple[tuple[int, ...], ...]
    qb1: tuple[int, ...]
    qW2: tuple[tuple[int, ...], ...]
    qb2: tuple[int, ...]
    q_act_slope: int
    q_act_intercept: int

    def __post_init__(self):
        if len(self.qW1) != self.n_i or any(len(r) != self.n_d for r in self.qW1):
            raise ValueError("qW1 must be n_i x n_d")
        if len(self.qW2) != self.n_d or any(len(r) != self.n_o for r in self.qW2):
            raise ValueError("qW2 must be n_d x n_o")
        if len(self.qb1) != self.n_d or len(self.qb2) != self.n_o:
            raise ValueError("bias widths do not match layer widths")

    @classmethod
    def from_arrays(cls, W1, b1, W2, b2, frac_bits: int,
                    slope: float = ACT_SLOPE, intercept: float = ACT_INTERCEPT) -> "QuantizedModel":
        W1, b1, W2, b2 = (np.asarray(a, dtype=float) for a in (W1, b1, W2, b2))
        for a in (W1, b1, W2, b2):
            if not np.all(np.isfinite(a)):
                raise EncodingOverflowError("non-finite weight")

        def q(a, level):
            return tuple(quantize(float(v), frac_bits, level) for v in a)

        return cls(
            n_i=W1.shape[0], n_d=W1.shape[1], n_o=W2.shape[1], frac_bits=frac_bits,
            qW1=tuple(q(row, 1) for row in W1), qb1=q(b1, LEVEL_HIDDEN),
            qW2=tuple(q(row, 1) for row in W2), qb2=q(b2, LEVEL_LOGITS),
            q_act_slope=quantize(slope, frac_bits, 1),
            q_act_intercept=quantize(intercept, frac_bits, LEVEL_ACTIVATION),
        )

    def dequantized(self) -> dict[str, np.ndarray | float]:
        s = float(1 << self.frac_bits)
        return {
            "W1": np.array(self.qW1, dtype=float) / s,
            "b1": np.array(self.qb1, dtype=float) / s**2,
            "W2": np.array(self.qW2, dtype=float) / s,
            "b2": np.array(self.qb2, dtype=float) / s**4,
            "slope": self.q_act_slope / s,
            "intercept": self.q_act_intercept / s**3,
        }

    def worst_case_bounds(self, input_bound: float = 1.0) -> dict[int, int]:
        """Largest |signed value| reachable at each level for inputs in [-bound, bound]."""
        bx = quantize(input_bound, self.frac_bits, 1)
        b2 = max(sum(abs(self.qW1[i][j]) for i in range(self.n_i)) * bx + abs(self.qb1[j])
                 for j in range(self.n_d))
        b3 = abs(self.q_act_slope) * b2 + abs(self.q_act_intercept)
        b4 = max(sum(abs(self.qW2[j][k]) for j in range(self.n_d)) * b3 + abs(self.qb2[k])
                 for k in range(self.n_o))
        return {LEVEL_INPUT: bx, LEVEL_HIDDEN: b2, LEVEL_ACTIVATION: b3, LEVEL_LOGITS: b4}

    def audit(self, modulus: int, input_bound: float = 1.0) -> dict[int, int]:
        """Refuse the model if any intermediate could wrap around n/2."""
        bounds = self.worst_case_bounds(input_bound)
        for level, b in bounds.items():
            if b >= modulus // 2:
                raise EncodingOverflowError(
                    f"level-{level} worst case {b.bit_length()} bits exceeds the "
                    f"{modulus.bit_length()}-bit modulus; use a larger key or fewer frac_bits")
        return bounds

    def to_dict(self) -> dict:
        return {
            "dims": [self.n_i, self.n_d, self.n_o],
            "frac_bits": self.frac_bits,
            "levels": {"W1": 1, "b1": LEVEL_HIDDEN, "act_slope": 1,
                       "act_intercept": LEVEL_ACTIVATION, "W2": 1, "b2": LEVEL_LOGITS},
            "W1": [[str(v) for v in row] for row in self.qW1],
            "b1": [str(v) for v in self.qb1],
            "W2": [[str(v) for v in row] for row in self.qW2],
            "b2": [str(v) for v in self.qb2],
            "act_slope": str(self.q_act_slope),
            "act_intercept": str(self.q_act_intercept),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizedModel":
        n_i, n_d, n_o = d["dims"]
        return cls(
            n_i=n_i, n_d=n_d, n_o=n_o, frac_bits=int(d["frac_bits"]),
            qW1=tuple(tuple(int(v) for v in row) for row in d["W1"]),
            qb1=tuple(int(v) for v in d["b1"]),
            qW2=tuple(tuple(int(v) for v in row) for row in d["W2"]),
            qb2=tuple(int(v) for v in d["b2"]),
            q_act_slope=int(d["act_slope"]),
            q_act_intercept=int(d["act_intercept"]),
        )


@dataclass(frozen=True)
class EncryptedVector:
    cts: tuple[Ciphertext, ...]

    def __post_init__(self):
        if len({c.scale_exp for c in self.cts}) > 1:
            raise ScaleMismatchError("entries of an EncryptedVector must share one scale level")

    @property
    def level(self) -> int:
        return self.cts[0].scale_exp if self.cts else 0

    @property
    def width(self) -> int:
        return len(self.cts)

    def __len__(self):
        return len(self.cts)

    def __getitem__(self, i):
        return self.cts[i]


# -- client side ------------------------------------------------------------

def encrypt_sample(pk: PublicKey, codec: FixedPointCodec, x: Sequence[float],
                   rng: random.Random | None = None) -> EncryptedVector:
    cts = []
    for v in x:
        c = paillier.encrypt(pk, codec.encode(float(v), LEVEL_INPUT), rng)
        cts.append(Ciphertext(c.value, LEVEL_INPUT))
    return EncryptedVector(tuple(cts))


def decrypt_vector(sk: PrivateKey, codec: FixedPointCodec, v: EncryptedVector) -> list[int]:
    """Decrypt each entry to its signed integer (still scaled by 2^(f*level))."""
    return [codec.signed(paillier.decrypt(sk, c)) for c in v.cts]


def decrypt_logits(sk: PrivateKey, codec: FixedPointCodec,
                   logits: EncryptedVector) -> tuple[list[float], int]:
    """Decode encrypted logits; returns the reals and the 1-based predicted class."""
    if logits.level != LEVEL_LOGITS:
        raise ScaleMismatchError(f"logits must be at level {LEVEL_LOGITS}, got {logits.level}")
    raw = decrypt_vector(sk, codec, logits)
    values = [codec.decode(r % codec.modulus, LEVEL_LOGITS) for r in raw]
    # argmax on the integers; ties go to the lowest index
    best = max(range(len(raw)), key=lambda k: (raw[k], -k))
    return values, best + 1


# -- server side (public key only) ------------------------------------------

def enc_weighted_sum(pk: PublicKey, W_q: Sequence[Sequence[int]], b_q: Sequence[int],
                     v: EncryptedVector) -> EncryptedVector:
    """out_j = sum_i W_q[i][j] * v_i + b_q[j]; output level is v.level + 1.

    W_q is at level 1, so b_q must already be at level v.level + 1.
    """
    if len(W_q) != v.width:
        raise ValueError(f"weight rows ({len(W_q)}) != input width ({v.width})")
    n_out = len(b_q)
    out = []
    for j in range(n_out):
        acc = None
        for i, c in enumerate(v.cts):
            term = paillier.mul_plain(pk, c, W_q[i][j])
            acc = term if acc is None else paillier.add_ct(pk, acc, term)
        acc = paillier.add_plain(pk, acc, b_q[j])
        out.append(Ciphertext(acc.value, v.level + 1))
    return EncryptedVector(tuple(out))


def enc_activation(pk: PublicKey, v: EncryptedVector, q_slope: int, q_intercept: int) -> EncryptedVector:
    """Homomorphic 0.238*z + 0.5: level 2 in, level 3 out."""
    if v.level != LEVEL_HIDDEN:
        raise ScaleMismatchError(f"activation expects level {LEVEL_HIDDEN}, got {v.level}")
    out = []
    for c in v.cts:
        t = paillier.add_plain(pk, paillier.mul_plain(pk, c, q_slope), q_intercept)
        out.append(Ciphertext(t.value, LEVEL_ACTIVATION))
    return EncryptedVector(tuple(out))


def enc_forward(pk: PublicKey, qmodel: QuantizedModel, v: EncryptedVector) -> EncryptedVector:
    """Encrypted logits (level 4) for an encrypted level-1 sample."""
    if v.width != qmodel.n_i:
        raise ValueError(f"sample width {v.width} != model input width {qmodel.n_i}")
    if v.level != LEVEL_INPUT:
        raise ScaleMismatchError(f"input must be at level {LEVEL_INPUT}, got {v.level}")
    h = enc_weighted_sum(pk, qmodel.qW1, qmodel.qb1, v)
    a = enc_activation(pk, h, qmodel.q_act_slope, qmodel.q_act_intercept)
    return enc_weighted_sum(pk, qmodel.qW2, qmodel.qb2, a)


def enc_forward_batch(pk: PublicKey, qmodel: QuantizedModel,
                      samples: Iterable[EncryptedVector], workers: int = 1) -> list[EncryptedVector]:
    samples = list(samples)
    if workers <= 1 or len(samples) < 2:
        return [enc_forward(pk, qmodel, v) for v in samples]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(partial(enc_forward, pk, qmodel), samples,
                           chunksize=max(1, len(samples) // (4 * workers))))


# -- plaintext references ---------------------------------------------------

def plain_forward_int(qmodel: QuantizedModel, x_q: Sequence[int]) -> list[int]:
    """Signed level-4 logits of the quantized model on level-1 integer inputs."""
    h = [sum(x_q[i] * qmodel.qW1[i][j] for i in range(qmodel.n_i)) + qmodel.qb1[j]
         for j in range(qmodel.n_d)]
    a = [qmodel.q_act_slope * hj + qmodel.q_act_intercept for hj in h]
    return [sum(a[j] * qmodel.qW2[j][k] for j in range(qmodel.n_d)) + qmodel.qb2[k]
            for k in range(qmodel.n_o)]


def logit_error_bound(W1, b1, W2, b2, qmodel: QuantizedModel, x) -> np.ndarray:
    """Per-logit bound on |quantized-pipeline logit - real linear-approx logit| at x.

    Accounts for rounding of the input, weights, biases and the activation
    slope; the intercept 0.5 is exact at any frac_bits >= 1.
    """
    W1, b1, W2, b2, x = (np.asarray(a, dtype=float) for a in (W1, b1, W2, b2, x))
    s = float(1 << qmodel.frac_bits)
    half_ulp = 0.5 / s
    dq = qmodel.dequantized()
    h = x @ W1 + b1
    a = ACT_SLOPE * h + ACT_INTERCEPT
    dh = (np.abs(dq["W1"]) + np.abs(x)[:, None]).sum(axis=0) * half_ulp + 0.5 / s**2
    da = abs(dq["slope"]) * dh + abs(dq["slope"] - ACT_SLOPE) * np.abs(h)
    dz = np.abs(dq["W2"]).T @ da + (np.abs(a) @ np.ones_like(W2)) * half_ulp + 0.5 / s**4
    return dz * (1 + 1e-9) + 1e-12


# -- record files -----------------------------------------------------------

def vector_to_record(v: EncryptedVector, frac_bits: int) -> dict:
    return {"version": RECORD_VERSION, "scale_level": v.level, "frac_bits": frac_bits,
            "width": v.width, "values": [format(c.value, "x") for c in v.cts]}


def record_to_vector(rec: dict) -> tuple[EncryptedVector, int]:
    if rec.get("version") != RECORD_VERSION:
        raise RecordFormatError(f"unsupported record version {rec.get('version')!r}")
    try:
        level = int(rec["scale_level"])
        values = [int(h, 16) for h in rec["values"]]
        if len(values) != int(rec["width"]):
            raise RecordFormatError("width field does not match number of values")
        frac_bits = int(rec["frac_bits"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordFormatError(f"malformed record: {exc}") from exc
    return EncryptedVector(tuple(Ciphertext(v, level) for v in values)), frac_bits


def write_records(path: str | Path, vectors: Iterable[EncryptedVector], frac_bits: int) -> None:
    with open(path, "w") as fh:
        for v in vectors:
            fh.write(json.dumps(vector_to_record(v, frac_bits)) + "\n")


def read_records(path: str | Path) -> list[tuple[EncryptedVector, int]]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(record_to_vector(json.loads(line)))
            except (json.JSONDecodeError, RecordFormatError, ScaleMismatchError) as exc:
                raise RecordFormatError(f"{path}: record {lineno}: {exc}") from exc
    return out
