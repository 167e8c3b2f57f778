"""Key-derived randomness: payload bits, carrier permutation, spreading codes.

Every derived object is a pure function of (key, claim, sizes). The PRF is
HMAC-SHA256 in counter mode::

    block_i = HMAC-SHA256(key, context || be32(i)),  i = 0, 1, 2, ...

and the keystream is the concatenation of blocks, read most-significant bit
first. Contexts are built from length-prefixed fields so that no two
(claim, tag, index) triples can collide.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import json
import math
import secrets
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from splatmark import _kernels

KEY_BYTES = 32
_BLOCK = 32

TAG_CODE = b"code"
TAG_PERM = b"perm"
TAG_SEQ = b"seq"
TAG_VIEW = b"view"


class KeyMaterialError(ValueError):
    """Malformed key material."""


def _be32(i: int) -> bytes:
    return int(i).to_bytes(4, "big")


def _field(x: bytes) -> bytes:
    return _be32(len(x)) + x


def claim_bytes(claim) -> bytes:
    """Normalise a claim to non-empty bytes (str claims are UTF-8 encoded)."""
    if isinstance(claim, str):
        claim = claim.encode("utf-8")
    claim = bytes(claim)
    if not claim:
        raise ValueError("claim must be non-empty")
    return claim


def make_context(claim, tag: bytes, index: int | None = None) -> bytes:
    ctx = _field(claim_bytes(claim)) + _field(tag)
    if index is not None:
        ctx += _be32(index)
    return ctx


@dataclass(frozen=True, eq=False)
class KeySet:
    """Carrier-organisation, claim-binding and spreading keys (32 bytes each)."""

    k_sel: bytes
    k_code: bytes
    k_seq: bytes

    def __post_init__(self):
        for name in ("k_sel", "k_code", "k_seq"):
            v = getattr(self, name)
            if not isinstance(v, (bytes, bytearray)) or len(v) != KEY_BYTES:
                raise KeyMaterialError(f"{name} must be {KEY_BYTES} bytes")
            object.__setattr__(self, name, bytes(v))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeySet):
            return NotImplemented
        return (
            hmac.compare_digest(self.k_sel, other.k_sel)
            & hmac.compare_digest(self.k_code, other.k_code)
            & hmac.compare_digest(self.k_seq, other.k_seq)
        )

    def __hash__(self) -> int:
        return hash((self.k_sel, self.k_code, self.k_seq))

    def __repr__(self) -> str:
        return "KeySet(<redacted>)"

    def fingerprint(self) -> str:
        """Short non-secret identifier (hash of all three keys)."""
        h = hashlib.sha256(b"splatmark-keyset" + self.k_sel + self.k_code + self.k_seq)
        return h.hexdigest()[:16]

    def replace(self, **changes) -> "KeySet":
        d = {"k_sel": self.k_sel, "k_code": self.k_code, "k_seq": self.k_seq}
        d.update(changes)
        return KeySet(**d)

    @classmethod
    def generate(cls, rng: np.random.Generator | None = None) -> "KeySet":
        """Fresh keys; pass an ``rng`` only for reproducible tests."""
        if rng is None:
            return cls(secrets.token_bytes(32), secrets.token_bytes(32), secrets.token_bytes(32))
        raw = rng.integers(0, 256, size=96, dtype=np.uint8).tobytes()
        return cls(raw[:32], raw[32:64], raw[64:])

    def to_json(self) -> str:
        return json.dumps(
            {"k_sel": self.k_sel.hex(), "k_code": self.k_code.hex(), "k_seq": self.k_seq.hex()},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "KeySet":
        d = json.loads(text)
        try:
            return cls(*(_parse_hex(d[k], k) for k in ("k_sel", "k_code", "k_seq")))
        except KeyError as exc:
            raise KeyMaterialError(f"keyset JSON missing {exc.args[0]!r}") from None


def _parse_hex(text: str, what: str) -> bytes:
    text = text.strip()
    if len(text) != 2 * KEY_BYTES:
        raise KeyMaterialError(f"{what}: expected {2 * KEY_BYTES} hex characters")
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise KeyMaterialError(f"{what}: not valid hex") from None


def read_key_file(path: str | Path) -> bytes:
    return _parse_hex(Path(path).read_text(), Path(path).name)


def load_keyset(path: str | Path) -> KeySet:
    """Load a JSON keyset file, or a directory holding one hex file per key."""
    path = Path(path)
    if path.is_dir():
        keys = []
        for name in ("k_sel", "k_code", "k_seq"):
            for suffix in ("", ".hex", ".key"):
                p = path / (name + suffix)
                if p.exists():
                    keys.append(read_key_file(p))
                    break
            else:
                raise KeyMaterialError(f"key directory has no {name} file")
        return KeySet(*keys)
    return KeySet.from_json(path.read_text())


def save_keyset(keys: KeySet, path: str | Path) -> None:
    Path(path).write_text(keys.to_json() + "\n")


# ---------------------------------------------------------------------------
# PRF


def prf_bytes(key: bytes, context: bytes, nbytes: int) -> bytes:
    nblocks = -(-nbytes // _BLOCK)
    out = b"".join(hmac.digest(key, context + _be32(i), "sha256") for i in range(nblocks))
    return out[:nbytes]


def prf_bits(key: bytes, context: bytes, nbits: int) -> np.ndarray:
    """First ``nbits`` of the keystream as a uint8 0/1 vector, MSB first."""
    if nbits < 0:
        raise ValueError("nbits must be non-negative")
    raw = np.frombuffer(prf_bytes(key, context, -(-nbits // 8)), dtype=np.uint8)
    return np.unpackbits(raw)[:nbits]


def prf_words(key: bytes, context: bytes, nwords: int) -> np.ndarray:
    """Keystream as big-endian uint32 words."""
    raw = prf_bytes(key, context, 4 * nwords)
    return np.frombuffer(raw, dtype=">u4").astype(np.uint32)


def _bipolar(bits: np.ndarray) -> np.ndarray:
    return 2.0 * bits.astype(np.float64) - 1.0


# ---------------------------------------------------------------------------
# Derivations


def derive_payload(keys: KeySet, claim, B: int) -> np.ndarray:
    """Bipolar payload b = 2 * PRF(K_code, claim)[:B] - 1."""
    if B < 1:
        raise ValueError("payload length must be >= 1")
    return _bipolar(prf_bits(keys.k_code, make_context(claim, TAG_CODE), B))


def keyed_permutation(key: bytes, context: bytes, T: int) -> np.ndarray:
    """Fisher-Yates shuffle of range(T) driven by the keystream of (key, context).

    Bounded integers use rejection sampling on 32-bit words, so the
    permutation is unbiased.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if T <= 1:
        return np.arange(T, dtype=np.int64)
    # Rejections are rare (< T / 2^32 per draw); grow the stream if one run falls short.
    nwords = T + 16
    while True:
        words = prf_words(key, context, nwords)
        perm, used = _kernels.fisher_yates(words, T)
        if used >= 0:
            return perm
        nwords *= 2


@functools.lru_cache(maxsize=64)
def _permutation_cached(k_sel: bytes, claim: bytes, T: int) -> np.ndarray:
    perm = keyed_permutation(k_sel, make_context(claim, TAG_PERM), T)
    perm.flags.writeable = False
    return perm


def derive_permutation(keys: KeySet, claim, T: int) -> np.ndarray:
    return _permutation_cached(keys.k_sel, claim_bytes(claim), int(T))


def derive_spreading_code(keys: KeySet, claim, j: int, T: int) -> np.ndarray:
    """Bipolar template s_j of length T for bit position j (1-based)."""
    if j < 1:
        raise ValueError("bit index j is 1-based")
    return _bipolar(prf_bits(keys.k_seq, make_context(claim, TAG_SEQ, j), T))


@functools.lru_cache(maxsize=32)
def _codes_cached(k_seq: bytes, claim: bytes, B: int, T: int) -> np.ndarray:
    codes = np.empty((B, T))
    nbytes = -(-T // 8)
    for j in range(1, B + 1):
        raw = np.frombuffer(prf_bytes(k_seq, make_context(claim, TAG_SEQ, j), nbytes), np.uint8)
        codes[j - 1] = np.unpackbits(raw)[:T]
    codes = 2.0 * codes - 1.0
    codes.flags.writeable = False
    return codes


def derive_spreading_codes(keys: KeySet, claim, B: int, T: int) -> np.ndarray:
    """All B templates stacked into a read-only (B, T) matrix."""
    return _codes_cached(keys.k_seq, claim_bytes(claim), int(B), int(T))


def subset_size(T: int, budget: float) -> int:
    if not 0 < budget <= 1:
        raise ValueError("budget must be in (0, 1]")
    # round() guards against products like 0.1 * 30 = 3.0000000000000004
    m = math.ceil(round(budget * T, 9))
    if m < 1:
        raise ValueError("detector subset would be empty")
    return m


def derive_detector_subset(keys: KeySet, claim, T: int, budget: float) -> np.ndarray:
    """First ceil(budget * T) entries of the keyed permutation, as slot indices."""
    return derive_permutation(keys, claim, T)[: subset_size(T, budget)]
