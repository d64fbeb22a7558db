"""Paillier cryptosystem with additive and plaintext-scalar homomorphisms.

Keys and ciphertexts are immutable values. Every operation that needs
randomness takes an explicit ``random.Random``-compatible source so batch
encryption can be parallelised (and reproduced) with per-worker sources.
"""
from __future__ import annotations

import json
import math
import os
import random
import secrets
from dataclasses import dataclass, field
from pathlib import Path

try:
    import gmpy2

    def powmod(base: int, exp: int, mod: int) -> int:
        return int(gmpy2.powmod(base, exp, mod))

    def invert(a: int, mod: int) -> int:
        return int(gmpy2.invert(a, mod))

except ImportError:  # pragma: no cover - exercised only without gmpy2

    def powmod(base: int, exp: int, mod: int) -> int:
        return pow(base, exp, mod)

    def invert(a: int, mod: int) -> int:
        return pow(a, -1, mod)


DEFAULT_KEYSIZE = 2048
MIN_KEYSIZE = 64
MILLER_RABIN_ROUNDS = 40
KEYFILE_VERSION = 1

_SMALL_PRIMES = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
    73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
]


class PaillierError(Exception):
    """Base class for cryptographic failures."""


class KeyGenerationError(PaillierError):
    pass


class PlaintextRangeError(PaillierError, ValueError):
    pass


class MalformedCiphertextError(PaillierError, ValueError):
    pass


class ScaleMismatchError(PaillierError, ValueError):
    pass


class KeyFileError(PaillierError):
    pass


def system_rng() -> random.Random:
    """OS-entropy random source, the default for anything secret."""
    return secrets.SystemRandom()


def L(x: int, n: int) -> int:
    return (x - 1) // n


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int
    n_squared: int = field(init=False, repr=False)
    bit_length: int = field(init=False)

    def __post_init__(self):
        if self.n <= 1:
            raise ValueError("modulus must be > 1")
        object.__setattr__(self, "n_squared", self.n * self.n)
        object.__setattr__(self, "bit_length", self.n.bit_length())
        if not (0 < self.g < self.n_squared) or math.gcd(self.g, self.n_squared) != 1:
            raise ValueError("g must lie in Z*_{n^2}")

    @property
    def simple_g(self) -> bool:
        return self.g == self.n + 1

    def g_pow(self, m: int) -> int:
        """g^m mod n^2, with the (1+n)^m = 1+mn shortcut when g = n+1."""
        if self.simple_g:
            return (1 + (m % self.n) * self.n) % self.n_squared
        return powmod(self.g, m % self.n, self.n_squared)


@dataclass(frozen=True)
class PrivateKey:
    public: PublicKey
    lam: int
    mu: int
    p: int
    q: int

    def __repr__(self):
        return f"PrivateKey(bit_length={self.public.bit_length})"


@dataclass(frozen=True)
class Ciphertext:
    """A value in Z*_{n^2} plus the fixed-point scale level of its plaintext."""

    value: int
    scale_exp: int = 0


# -- prime generation -------------------------------------------------------

def is_probable_prime(n: int, rng: random.Random, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for sp in _SMALL_PRIMES:
        if n == sp:
            return True
        if n % sp == 0:
            return False
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def random_prime(bits: int, rng: random.Random, max_attempts: int = 100_000) -> int:
    """Random prime with exactly `bits` bits and the top two bits set."""
    for _ in range(max_attempts):
        candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if is_probable_prime(candidate, rng):
            return candidate
    raise KeyGenerationError(f"no {bits}-bit prime found in {max_attempts} attempts")


# -- key generation ---------------------------------------------------------

def keypair_from_primes(p: int, q: int, g: int | None = None) -> tuple[PublicKey, PrivateKey]:
    """Build a key pair from known primes. Used by keygen and by small-key tests."""
    if p == q:
        raise KeyGenerationError("p and q must differ")
    n = p * q
    if math.gcd(n, (p - 1) * (q - 1)) != 1:
        raise KeyGenerationError("gcd(pq, (p-1)(q-1)) != 1")
    lam = math.lcm(p - 1, q - 1)
    pk = PublicKey(n, n + 1 if g is None else g)
    u = L(powmod(pk.g, lam, pk.n_squared), n)
    if math.gcd(u, n) != 1:
        raise KeyGenerationError("g does not satisfy gcd(L(g^lambda mod n^2), n) = 1")
    return pk, PrivateKey(pk, lam, invert(u, n), p, q)


def keygen(bit_length: int = DEFAULT_KEYSIZE, rng: random.Random | None = None,
           random_g: bool = False, max_attempts: int = 1000) -> tuple[PublicKey, PrivateKey]:
    """Generate a Paillier key pair whose modulus has exactly `bit_length` bits.

    With ``random_g`` the generator is drawn from Z*_{n^2} until the
    validity condition holds; otherwise g = n + 1.
    """
    if bit_length < MIN_KEYSIZE:
        raise KeyGenerationError(f"bit_length must be >= {MIN_KEYSIZE}, got {bit_length}")
    rng = rng if rng is not None else system_rng()
    half = bit_length // 2
    for _ in range(max_attempts):
        p = random_prime(half, rng)
        q = random_prime(bit_length - half, rng)
        if p == q or (p * q).bit_length() != bit_length:
            continue
        n = p * q
        if math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        if not random_g:
            return keypair_from_primes(p, q)
        n2 = n * n
        lam = math.lcm(p - 1, q - 1)
        for _ in range(max_attempts):
            g = rng.randrange(2, n2)
            if math.gcd(g, n2) == 1 and math.gcd(L(powmod(g, lam, n2), n), n) == 1:
                return keypair_from_primes(p, q, g)
    raise KeyGenerationError(f"key generation did not converge in {max_attempts} attempts")


# -- core operations --------------------------------------------------------

def random_r(pk: PublicKey, rng: random.Random) -> int:
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            return r


def encrypt(pk: PublicKey, m: int, rng: random.Random | None = None, *, r: int | None = None) -> Ciphertext:
    """Encrypt an integer 0 <= m < n. `r` overrides the random obfuscator."""
    if not 0 <= m < pk.n:
        raise PlaintextRangeError(f"plaintext must lie in [0, n), got {m}")
    if r is None:
        r = random_r(pk, rng if rng is not None else system_rng())
    elif not 0 < r < pk.n or math.gcd(r, pk.n) != 1:
        raise ValueError("r must be in Z*_n")
    c = pk.g_pow(m) * powmod(r, pk.n, pk.n_squared) % pk.n_squared
    return Ciphertext(c, 0)


def _check_ct(pk: PublicKey, c: Ciphertext) -> None:
    if not 0 < c.value < pk.n_squared or math.gcd(c.value, pk.n_squared) != 1:
        raise MalformedCiphertextError("ciphertext is not an element of Z*_{n^2}")


def decrypt_direct(sk: PrivateKey, c: Ciphertext) -> int:
    """m = L(c^lambda mod n^2) * mu mod n, computed without CRT."""
    pk = sk.public
    _check_ct(pk, c)
    return L(powmod(c.value, sk.lam, pk.n_squared), pk.n) * sk.mu % pk.n


def _crt_params(sk: PrivateKey) -> tuple[int, int, int, int, int]:
    p, q, g = sk.p, sk.q, sk.public.g
    pp, qq = p * p, q * q
    hp = invert(L(powmod(g % pp, p - 1, pp), p), p)
    hq = invert(L(powmod(g % qq, q - 1, qq), q), q)
    return pp, qq, hp, hq, invert(p, q)


_CRT_CACHE: dict[tuple[int, int, int], tuple[int, int, int, int, int]] = {}


def decrypt(sk: PrivateKey, c: Ciphertext) -> int:
    """Decrypt via the CRT over p^2 and q^2; agrees with `decrypt_direct`."""
    _check_ct(sk.public, c)
    key = (sk.p, sk.q, sk.public.g)
    params = _CRT_CACHE.get(key)
    if params is None:
        params = _CRT_CACHE.setdefault(key, _crt_params(sk))
    pp, qq, hp, hq, p_inv_q = params
    p, q = sk.p, sk.q
    mp = L(powmod(c.value % pp, p - 1, pp), p) * hp % p
    mq = L(powmod(c.value % qq, q - 1, qq), q) * hq % q
    return mp + ((mq - mp) * p_inv_q % q) * p


def add_ct(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    if a.scale_exp != b.scale_exp:
        raise ScaleMismatchError(f"scale levels differ: {a.scale_exp} vs {b.scale_exp}")
    return Ciphertext(a.value * b.value % pk.n_squared, a.scale_exp)


def mul_plain(pk: PublicKey, a: Ciphertext, k: int) -> Ciphertext:
    """Ciphertext of k * m_a. Negative k uses the inverse of a^|k|."""
    k %= pk.n
    if k > pk.n // 2:
        # a^(k-n) and a^k decrypt identically; the short negative exponent is far cheaper
        v = invert(powmod(a.value, pk.n - k, pk.n_squared), pk.n_squared)
    else:
        v = powmod(a.value, k, pk.n_squared)
    return Ciphertext(v, a.scale_exp)


def add_plain(pk: PublicKey, a: Ciphertext, k: int) -> Ciphertext:
    return Ciphertext(a.value * pk.g_pow(k) % pk.n_squared, a.scale_exp)


def rerandomize(pk: PublicKey, a: Ciphertext, rng: random.Random | None = None) -> Ciphertext:
    r = random_r(pk, rng if rng is not None else system_rng())
    return Ciphertext(a.value * powmod(r, pk.n, pk.n_squared) % pk.n_squared, a.scale_exp)


def check_keypair(pk: PublicKey, sk: PrivateKey) -> None:
    """Raise PaillierError unless every key invariant holds."""
    p, q = sk.p, sk.q
    rng = random.Random(0)
    if p == q or not is_probable_prime(p, rng) or not is_probable_prime(q, rng):
        raise PaillierError("p, q must be distinct primes")
    if p * q != pk.n or sk.public != pk:
        raise PaillierError("n != p*q")
    if sk.lam != math.lcm(p - 1, q - 1):
        raise PaillierError("lambda != lcm(p-1, q-1)")
    u = L(powmod(pk.g, sk.lam, pk.n_squared), pk.n)
    if math.gcd(u, pk.n) != 1 or sk.mu * u % pk.n != 1:
        raise PaillierError("mu is not the inverse of L(g^lambda mod n^2)")


# -- key files --------------------------------------------------------------

def public_key_to_dict(pk: PublicKey) -> dict:
    return {"version": KEYFILE_VERSION, "kind": "public", "bit_length": pk.bit_length,
            "n": format(pk.n, "x"), "g": format(pk.g, "x")}


def private_key_to_dict(sk: PrivateKey) -> dict:
    d = public_key_to_dict(sk.public)
    d.update(kind="private", **{k: format(v, "x") for k, v in
                                (("lambda", sk.lam), ("mu", sk.mu), ("p", sk.p), ("q", sk.q))})
    return d


def key_from_dict(d: dict) -> PublicKey | PrivateKey:
    try:
        if d.get("version") != KEYFILE_VERSION:
            raise KeyFileError(f"unsupported key file version {d.get('version')!r}")
        pk = PublicKey(int(d["n"], 16), int(d["g"], 16))
        if pk.bit_length != int(d["bit_length"]):
            raise KeyFileError("bit_length field does not match n")
        if d.get("kind") == "public":
            return pk
        if d.get("kind") == "private":
            return PrivateKey(pk, int(d["lambda"], 16), int(d["mu"], 16),
                              int(d["p"], 16), int(d["q"], 16))
    except (KeyError, TypeError, ValueError) as exc:
        raise KeyFileError(f"malformed key file: {exc}") from exc
    raise KeyFileError(f"unknown key kind {d.get('kind')!r}")


def save_public_key(pk: PublicKey, path: str | Path) -> None:
    Path(path).write_text(json.dumps(public_key_to_dict(pk), indent=2) + "\n")


def save_private_key(sk: PrivateKey, path: str | Path) -> None:
    path = Path(path)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        fh.write(json.dumps(private_key_to_dict(sk), indent=2) + "\n")
    try:
        os.chmod(path, 0o600)
    except OSError:  # pragma: no cover - platform without POSIX modes
        pass


def _load(path: str | Path) -> PublicKey | PrivateKey:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise KeyFileError(f"{path}: not a key document ({exc})") from exc
    return key_from_dict(d)


def load_public_key(path: str | Path) -> PublicKey:
    key = _load(path)
    if not isinstance(key, PublicKey):
        raise KeyFileError(f"{path}: expected a public key, found a private key")
    return key


def load_private_key(path: str | Path) -> PrivateKey:
    key = _load(path)
    if not isinstance(key, PrivateKey):
        raise KeyFileError(f"{path}: expected a private key")
    return key
