"""Non-blind correlation detector over the keyed carrier pool."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from splatmark.gsmodel import GaussianScene, flatten_sh
from splatmark.keying import KeySet, derive_detector_subset, derive_payload, derive_spreading_codes
from splatmark.transform import CarrierPool, build_carrier_pool, dct_forward, read_carriers
from splatmark.watermark import EmbedConfig, compute_amplitudes


class AlignmentError(ValueError):
    """Original and suspect scenes are not in Gaussian correspondence."""


@dataclass
class DetectionResult:
    present: bool
    bits: np.ndarray
    scores: np.ndarray
    bit_accuracy: float | None
    normalized_margin: float
    subset_size: int
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "present": bool(self.present),
            "bits": [int(b) for b in self.bits],
            "scores": [float(s) for s in self.scores],
            "bit_accuracy": None if self.bit_accuracy is None else float(self.bit_accuracy),
            "normalized_margin": float(self.normalized_margin),
            "subset_size": int(self.subset_size),
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def residual(original: GaussianScene, suspect: GaussianScene, pool: CarrierPool) -> np.ndarray:
    """Carrier-slot difference z = carriers(suspect) - carriers(original)."""
    if len(original) != len(suspect) or original.sh_degree != suspect.sh_degree:
        raise AlignmentError(
            f"scene mismatch (N={len(original)}/{len(suspect)}, degree="
            f"{original.sh_degree}/{suspect.sh_degree}); realign the suspect first"
        )
    x0 = dct_forward(flatten_sh(original).values)
    x1 = dct_forward(flatten_sh(suspect).values)
    return read_carriers(x1, pool) - read_carriers(x0, pool)


def decode(
    z,
    keys: KeySet,
    claim,
    config: EmbedConfig,
    reference_payload=None,
) -> DetectionResult:
    """Correlate z with the spreading codes on the budgeted subset and sign-test.

    ``reference_payload`` defaults to the payload derived from ``keys`` and
    ``claim``; pass ``False`` to skip bit accuracy. Presence follows
    ``config.presence_rule`` with threshold ``config.presence_threshold``.
    """
    z = np.asarray(z, dtype=np.float64)
    T = z.shape[0]
    omega = derive_detector_subset(keys, claim, T, config.budget)
    codes = derive_spreading_codes(keys, claim, config.B, T)
    scores = codes[:, omega] @ z[omega]
    bits = np.where(scores >= 0, 1, -1).astype(np.int8)

    amps = compute_amplitudes(config)
    expected = derive_payload(keys, claim, config.B)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = scores / (amps * len(omega))
    if np.all(np.isfinite(norm)):
        stat = norm * expected if config.presence_rule == "signed" else np.abs(norm)
        present = bool(stat.mean() >= config.presence_threshold)
        margin = float(np.abs(norm).min())
    else:
        present, margin = False, float("nan")

    if reference_payload is None:
        reference_payload = expected
    accuracy = None
    if reference_payload is not False:
        accuracy = float(np.mean(bits == np.asarray(reference_payload)))
    return DetectionResult(
        present=present,
        bits=bits,
        scores=scores,
        bit_accuracy=accuracy,
        normalized_margin=margin,
        subset_size=len(omega),
    )


def detect_model(
    original: GaussianScene,
    suspect: GaussianScene,
    keys: KeySet,
    claim,
    config: EmbedConfig,
    reference_payload=None,
) -> DetectionResult:
    pool = build_carrier_pool(original.sh_len, config.band, keys, claim)
    z = residual(original, suspect, pool)
    return decode(z, keys, claim, config, reference_payload)
