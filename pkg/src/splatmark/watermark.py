"""Code-division spread-spectrum embedding into the SH carrier pool."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from splatmark.gsmodel import GaussianScene, flatten_sh, unflatten_sh
from splatmark.keying import KeySet, claim_bytes, derive_payload, derive_spreading_codes
from splatmark.transform import (
    DEFAULT_BAND,
    CarrierPool,
    build_carrier_pool,
    dct_forward,
    dct_inverse,
    read_carriers,
    write_carriers,
)

RECORD_VERSION = 1
# "signed": mean_j b_j S_j / (alpha_j |Omega|) against the keyed payload.
# "magnitude": mean_j |S_j| / (alpha_j |Omega|); noise alone can push this over threshold.
PRESENCE_RULES = ("signed", "magnitude")


class CapacityError(ValueError):
    pass


class Protocol(str, enum.Enum):
    FIXED_PER_BIT = "FIXED_PER_BIT"
    FIXED_TOTAL = "FIXED_TOTAL"


@dataclass(frozen=True)
class EmbedConfig:
    B: int = 32
    alpha: float = 0.01
    protocol: Protocol = Protocol.FIXED_PER_BIT
    band: tuple[float, float] = DEFAULT_BAND
    budget: float = 1.0
    reference_B: int = 32
    capacity_ratio: int = 64
    presence_threshold: float = 0.5
    presence_rule: str = "signed"

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0 < self.budget <= 1:
            raise ValueError("budget must be in (0, 1]")
        if self.reference_B < 1:
            raise ValueError("reference_B must be >= 1")
        if self.presence_rule not in PRESENCE_RULES:
            raise ValueError(f"presence_rule must be one of {PRESENCE_RULES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"] = self.protocol.value
        d["band"] = list(self.band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedConfig":
        d = dict(d)
        if "band" in d:
            d["band"] = tuple(d["band"])
        return cls(**d)


def compute_amplitudes(config: EmbedConfig) -> np.ndarray:
    """Per-bit amplitudes alpha_j.

    FIXED_PER_BIT keeps alpha_j = alpha (energy grows with B); FIXED_TOTAL
    scales by sqrt(reference_B / B) so sum_j alpha_j^2 is independent of B.
    """
    if config.protocol is Protocol.FIXED_PER_BIT:
        a = config.alpha
    else:
        a = config.alpha * np.sqrt(config.reference_B / config.B)
    return np.full(config.B, a, dtype=np.float64)


def superpose(amplitudes, payload, codes) -> np.ndarray:
    """delta = sum_j amplitudes[j] * payload[j] * codes[j]."""
    weights = np.asarray(amplitudes, dtype=np.float64) * np.asarray(payload, dtype=np.float64)
    return weights @ np.asarray(codes, dtype=np.float64)


def perturbation_vector(keys: KeySet, claim, config: EmbedConfig, T: int) -> np.ndarray:
    if T < 1:
        raise ValueError("carrier pool must be non-empty")
    payload = derive_payload(keys, claim, config.B)
    codes = derive_spreading_codes(keys, claim, config.B, T)
    return superpose(compute_amplitudes(config), payload, codes)


def check_capacity(T: int, config: EmbedConfig) -> None:
    if T < config.B or T < config.capacity_ratio * config.B:
        raise CapacityError(
            f"payload exceeds carrier capacity heuristic: T={T} < {config.capacity_ratio}*B={config.capacity_ratio * config.B}"
        )


def carrier_checksum(carriers: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(carriers, dtype="<f8").tobytes()).hexdigest()


def _claim_repr(claim) -> str:
    raw = claim_bytes(claim)
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return "hex:" + raw.hex()


def claim_from_repr(text: str) -> bytes:
    if text.startswith("hex:"):
        return bytes.fromhex(text[4:])
    return text.encode("utf-8")


@dataclass(frozen=True)
class EmbedRecord:
    """Reproducibility sidecar. Holds no key material."""

    config: dict
    claim: str
    n: int
    sh_degree: int
    L: int
    T: int
    carrier_lo: int
    carrier_hi: int
    carrier_sha256: str
    version: int = RECORD_VERSION
    notes: dict = field(default_factory=dict)

    def embed_config(self) -> EmbedConfig:
        return EmbedConfig.from_dict(self.config)

    def claim_bytes(self) -> bytes:
        return claim_from_repr(self.claim)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EmbedRecord":
        return cls(**json.loads(text))


def carrier_pool_for(scene: GaussianScene, keys: KeySet, claim, config: EmbedConfig) -> CarrierPool:
    return build_carrier_pool(scene.sh_len, config.band, keys, claim)


def embed(scene: GaussianScene, keys: KeySet, claim, config: EmbedConfig):
    """Watermark the SH coefficients of ``scene``; returns (watermarked scene, record).

    The carrier-domain perturbation is mapped back through the inverse DCT and
    added to the raw SH vector. By linearity this equals inverse(forward(x) + delta)
    but leaves x untouched when delta is zero.
    """
    if len(scene) == 0:
        raise ValueError("cannot embed into an empty scene")
    pool = carrier_pool_for(scene, keys, claim, config)
    check_capacity(pool.size, config)
    flat = flatten_sh(scene).values
    carriers = read_carriers(dct_forward(flat), pool)
    delta = perturbation_vector(keys, claim, config, pool.size)
    spread = dct_inverse(write_carriers(np.zeros_like(flat), pool, delta))
    marked = unflatten_sh(scene, flat + spread)
    record = EmbedRecord(
        config=config.to_dict(),
        claim=_claim_repr(claim),
        n=len(scene),
        sh_degree=scene.sh_degree,
        L=scene.sh_len,
        T=pool.size,
        carrier_lo=pool.lo,
        carrier_hi=pool.hi,
        carrier_sha256=carrier_checksum(carriers),
    )
    return marked, record
