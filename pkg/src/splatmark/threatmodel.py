"""Adversary access vectors, box-regime classification and the scenario catalog."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, fields

ENTRY_NAMES = ("access_M", "access_Mw", "access_E", "access_D", "oracle_D", "oracle_R", "key_K")


class OutOfModelError(ValueError):
    """Vector grants the key or the original model, which the evaluation model excludes."""


class ManifestError(ValueError):
    pass


class Regime(str, enum.Enum):
    BLACK = "BLACK"
    GREY = "GREY"
    WHITE = "WHITE"


@dataclass(frozen=True)
class AccessVector:
    access_M: int = 0
    access_Mw: int = 0
    access_E: int = 0
    access_D: int = 0
    oracle_D: int = 0
    oracle_R: int = 0
    key_K: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v not in (0, 1, True, False):
                raise ValueError(f"{f.name} must be 0 or 1, got {v!r}")
            object.__setattr__(self, f.name, int(v))

    @classmethod
    def of(cls, entries) -> "AccessVector":
        entries = list(entries)
        if len(entries) != len(ENTRY_NAMES):
            raise ValueError(f"access vector needs {len(ENTRY_NAMES)} entries")
        return cls(*entries)

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, n) for n in ENTRY_NAMES)

    def __str__(self) -> str:
        return "[" + ",".join(str(v) for v in self.as_tuple()) + "]"

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in ENTRY_NAMES}

    @classmethod
    def parse(cls, text: str) -> "AccessVector":
        """Accept the bracket form '[0,1,1,0,0,1,0]'."""
        body = text.strip().strip("[]")
        return cls.of(int(t) for t in body.split(","))


def classify_regime(a: AccessVector, allow_out_of_model: bool = False) -> Regime:
    """Regime from the artifact-access entries; oracle entries do not affect it."""
    if (a.key_K or a.access_M) and not allow_out_of_model:
        raise OutOfModelError(f"{a}: key or original-model access is outside the evaluation model")
    core = (a.access_Mw, a.access_E, a.access_D)
    if core == (0, 0, 0):
        return Regime.BLACK
    if core == (1, 1, 1):
        return Regime.WHITE
    return Regime.GREY


def precedes(a: AccessVector, b: AccessVector) -> bool:
    """Strict componentwise order: a <= b everywhere and a != b."""
    ta, tb = a.as_tuple(), b.as_tuple()
    return all(x <= y for x, y in zip(ta, tb)) and ta != tb


@dataclass(frozen=True)
class Scenario:
    name: str
    regime: Regime
    vector: AccessVector
    description: str
    source: str
    note: str = ""

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "regime": self.regime.value,
            "vector": list(self.vector.as_tuple()),
            "vector_text": str(self.vector),
            "description": self.description,
            "source": self.source,
        }
        if self.note:
            d["note"] = self.note
        return d


_V = AccessVector.of

_CATALOG = (
    Scenario("cloud-restreaming", Regime.BLACK, _V([0, 0, 0, 0, 0, 1, 0]),
             "Rendered frames captured or screen-recorded and rebroadcast with attribution blurred.",
             "forensic watermarking, black box (i)"),
    Scenario("passive-leakage", Regime.BLACK, _V([0, 0, 0, 0, 0, 0, 0]),
             "Only a fixed-trajectory video or a few screenshots leak; weakest adversary.",
             "forensic watermarking, black box (ii)"),
    Scenario("tracing-portal-probing", Regime.BLACK, _V([0, 0, 0, 0, 1, 0, 0]),
             "Processed excerpts are repeatedly submitted to a detector and its feedback drives attenuation.",
             "forensic watermarking, black box (iii)"),
    Scenario("offline-forensic-tracing", Regime.GREY, _V([0, 1, 1, 0, 0, 1, 0]),
             "Recipient, supply-chain or collaborator leaks traced from model copies, including collusion.",
             "forensic watermarking, grey box (i)",
             note="regime header lists access_E=0 but this sub-scenario lists access_E=1; vector kept as listed"),
    Scenario("oracle-guided-model-evasion", Regime.GREY, _V([0, 1, 1, 0, 1, 0, 0]),
             "Model edits combined with repeated tracing-interface queries used as a removal cost.",
             "forensic watermarking, grey box (ii)",
             note="regime header lists access_E=0 but this sub-scenario lists access_E=1; vector kept as listed"),
    Scenario("fingerprint-whitebox", Regime.WHITE, _V([0, 1, 1, 1, 1, 1, 0]),
             "Detector implementation and weights known; evasion or framing by direct optimisation.",
             "forensic watermarking, white box"),
    Scenario("interactive-viewer", Regime.BLACK, _V([0, 0, 0, 0, 0, 1, 0]),
             "Screenshots or recordings from an interactive viewer; model file inaccessible.",
             "ownership verification, black box (i)"),
    Scenario("broadcast", Regime.BLACK, _V([0, 0, 0, 0, 0, 0, 0]),
             "Fixed-trajectory video or image set without viewpoint control.",
             "ownership verification, black box (ii)"),
    Scenario("local-whitebox-opt", Regime.WHITE, _V([0, 1, 1, 1, 0, 1, 0]),
             "Gradient-based erasure with leaked embedder and detector weights, no portal.",
             "ownership verification, white box (i)"),
    Scenario("online-whitebox-opt", Regime.WHITE, _V([0, 1, 1, 1, 1, 1, 0]),
             "White-box optimisation aided by portal queries to validate intermediate results.",
             "ownership verification, white box (ii)"),
    Scenario("offline-piracy-resale", Regime.GREY, _V([0, 1, 1, 0, 0, 1, 0]),
             "Pirate prunes, re-optimises or perturbs the watermarked model offline before resale.",
             "ownership verification, grey box (i)"),
    Scenario("online-piracy-resale", Regime.GREY, _V([0, 1, 1, 0, 1, 1, 0]),
             "Pirate iterates model edits against a verification portal until detection fails.",
             "ownership verification, grey box (ii)"),
)


def scenario_catalog() -> list[Scenario]:
    return list(_CATALOG)


def find_scenario(name: str) -> Scenario:
    for s in _CATALOG:
        if s.name == name:
            return s
    raise KeyError(f"unknown scenario {name!r}")


def catalog_json() -> str:
    return json.dumps([s.to_dict() for s in _CATALOG], indent=2)


def required_capabilities(attack) -> dict:
    """Access entries an attack presupposes: model attacks need the watermarked
    model; image attacks need rendered output (a render oracle or leaked renders)."""
    if attack.level == "model":
        return {"access_Mw": 1}
    return {}


def validate_manifest(vector: AccessVector, attacks) -> None:
    """Reject attack suites that exceed the declared adversary."""
    for atk in attacks:
        for name, needed in required_capabilities(atk).items():
            if getattr(vector, name) < needed:
                raise ManifestError(
                    f"attack {atk.label()} requires {name}=1 but the declared vector {vector} "
                    f"({classify_regime(vector, allow_out_of_model=True).value}) has {name}=0"
                )
