"""Authenticated verification portal: key registry, per-principal query budgets,
truncated responses, keyed challenge viewpoints and an append-only audit log.

The portal is an in-process state machine. With a ``state_dir`` it persists
to disk::

    state_dir/
      principals.json            ids, tokens, roles, remaining budgets
      audit.jsonl                one AuditRecord per line, append-only
      assets/<asset_id>/
        original.ply             registered original scene
        keys.json                keyset (never leaves the portal)
        meta.json                claim and embed config

All mutations run under one lock; audit sequence numbers give the order.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import os
import secrets
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from splatmark.attacks import realign_with_stats
from splatmark.detect import AlignmentError, detect_model
from splatmark.gsmodel import GaussianScene, load_ply, save_ply
from splatmark.keying import TAG_VIEW, KeySet, _field, claim_bytes, load_keyset, prf_words, save_keyset
from splatmark.render import Camera
from splatmark.watermark import EmbedConfig, _claim_repr, claim_from_repr


class PortalError(Exception):
    code = "portal_error"


class AuthenticationError(PortalError):
    code = "unauthenticated"


class AuthorizationError(PortalError):
    code = "forbidden"


class QuotaExceededError(PortalError):
    code = "quota_exceeded"


class AssetNotFoundError(PortalError):
    code = "not_found"


class Truncation(str, enum.Enum):
    FULL = "FULL"
    DECISION_ONLY = "DECISION_ONLY"
    DECISION_PLUS_ACCURACY = "DECISION_PLUS_ACCURACY"


class Role(str, enum.Enum):
    VERIFIER = "VERIFIER"
    AUDITOR = "AUDITOR"


@dataclass(frozen=True)
class PortalPolicy:
    max_queries: int = 32
    truncation: Truncation = Truncation.DECISION_PLUS_ACCURACY
    challenge_view_count: int = 8
    view_width: int = 64
    view_height: int = 64

    def __post_init__(self):
        object.__setattr__(self, "truncation", Truncation(self.truncation))
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["truncation"] = self.truncation.value
        return d


@dataclass
class Principal:
    id: str
    token: str
    query_budget: int
    role: Role = Role.VERIFIER

    def to_dict(self) -> dict:
        return {"id": self.id, "token": self.token, "query_budget": self.query_budget,
                "role": Role(self.role).value}


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    principal: str
    action: str
    request_digest: str
    result: dict
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class _Asset:
    original: GaussianScene
    keys: KeySet
    claim: bytes
    config: EmbedConfig
    views_issued: int = 0
    meta: dict = field(default_factory=dict)


def _digest(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(8, "big"))
        h.update(p)
    return h.hexdigest()


class Portal:
    def __init__(self, policy: PortalPolicy | None = None, state_dir: str | Path | None = None,
                 clock=time.time):
        self.policy = policy or PortalPolicy()
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self._clock = clock
        self._lock = threading.RLock()
        self._assets: dict[str, _Asset] = {}
        self._principals: dict[str, Principal] = {}
        self._audit: list[AuditRecord] = []
        if self.state_dir is not None:
            self._load_state()

    # -- persistence ------------------------------------------------------

    def _load_state(self) -> None:
        sd = self.state_dir
        sd.mkdir(parents=True, exist_ok=True)
        pol = sd / "policy.json"
        if pol.exists():
            self.policy = PortalPolicy(**json.loads(pol.read_text()))
        else:
            pol.write_text(json.dumps(self.policy.to_dict(), indent=2))
        pfile = sd / "principals.json"
        if pfile.exists():
            for d in json.loads(pfile.read_text()):
                p = Principal(d["id"], d["token"], int(d["query_budget"]), Role(d["role"]))
                self._principals[p.id] = p
        afile = sd / "audit.jsonl"
        if afile.exists():
            for line in afile.read_text().splitlines():
                if line.strip():
                    self._audit.append(AuditRecord(**json.loads(line)))
        adir = sd / "assets"
        if adir.exists():
            for d in sorted(adir.iterdir()):
                meta = json.loads((d / "meta.json").read_text())
                self._assets[d.name] = _Asset(
                    original=load_ply((d / "original.ply").read_bytes()),
                    keys=load_keyset(d / "keys.json"),
                    claim=claim_from_repr(meta["claim"]),
                    config=EmbedConfig.from_dict(meta["config"]),
                )

    def _save_principals(self) -> None:
        if self.state_dir is None:
            return
        tmp = self.state_dir / "principals.json.tmp"
        tmp.write_text(json.dumps([p.to_dict() for p in self._principals.values()], indent=2))
        os.replace(tmp, self.state_dir / "principals.json")

    def _append_audit(self, principal: str, action: str, request_digest: str, result: dict) -> AuditRecord:
        rec = AuditRecord(
            seq=len(self._audit) + 1,
            principal=principal,
            action=action,
            request_digest=request_digest,
            result=result,
            timestamp=float(self._clock()),
        )
        self._audit.append(rec)
        if self.state_dir is not None:
            with open(self.state_dir / "audit.jsonl", "a") as fh:
                fh.write(rec.to_json() + "\n")
        return rec

    # -- principals -------------------------------------------------------

    def add_principal(self, pid: str, role: Role = Role.VERIFIER, token: str | None = None,
                      budget: int | None = None) -> Principal:
        with self._lock:
            if pid in self._principals:
                raise PortalError(f"principal {pid!r} already exists")
            p = Principal(pid, token or secrets.token_hex(16),
                          self.policy.max_queries if budget is None else int(budget), Role(role))
            self._principals[pid] = p
            self._save_principals()
            return p

    def _authenticate(self, pid: str, token: str) -> Principal:
        p = self._principals.get(pid)
        if p is None or not hmac.compare_digest(p.token.encode(), str(token).encode()):
            raise AuthenticationError("invalid principal or token")
        return p

    def remaining_budget(self, pid: str) -> int:
        return self._principals[pid].query_budget

    # -- assets -----------------------------------------------------------

    def register_asset(self, original: GaussianScene, keys: KeySet, claim, config: EmbedConfig) -> str:
        """Store the original and its keys; identical registrations return the same id."""
        claim = claim_bytes(claim)
        scene_bytes = save_ply(original)
        cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
        key_hash = hashlib.sha256(keys.k_sel + keys.k_code + keys.k_seq).digest()
        asset_id = "asset-" + _digest(scene_bytes, claim, cfg, key_hash)[:24]
        with self._lock:
            if asset_id in self._assets:
                return asset_id
            self._assets[asset_id] = _Asset(original, keys, claim, config)
            if self.state_dir is not None:
                d = self.state_dir / "assets" / asset_id
                d.mkdir(parents=True, exist_ok=True)
                (d / "original.ply").write_bytes(scene_bytes)
                save_keyset(keys, d / "keys.json")
                (d / "keys.json").chmod(0o600)
                (d / "meta.json").write_text(json.dumps(
                    {"claim": _claim_repr(claim), "config": config.to_dict()}, indent=2, sort_keys=True))
            return asset_id

    def _asset(self, asset_id: str) -> _Asset:
        try:
            return self._assets[asset_id]
        except KeyError:
            raise AssetNotFoundError(f"unknown asset {asset_id!r}") from None

    # -- verification -----------------------------------------------------

    def _truncate(self, result) -> dict:
        t = self.policy.truncation
        if t is Truncation.DECISION_ONLY:
            return {"present": bool(result.present)}
        if t is Truncation.DECISION_PLUS_ACCURACY:
            return {"present": bool(result.present), "bit_accuracy": result.bit_accuracy}
        return result.to_dict()

    def verify_model(self, pid: str, token: str, asset_id: str, suspect: GaussianScene) -> dict:
        """Run the model detector for an authenticated principal. Each attempt,
        successful or not, appends exactly one audit record."""
        request = _digest(asset_id.encode(), save_ply(suspect))
        with self._lock:
            try:
                principal = self._authenticate(pid, token)
                asset = self._asset(asset_id)
                if principal.query_budget <= 0:
                    raise QuotaExceededError(f"query budget exhausted for {pid!r}")
                principal.query_budget -= 1
                self._save_principals()
            except PortalError as exc:
                self._append_audit(pid, "verify", request, {"error": exc.code})
                raise
            aligned = suspect
            realigned = False
            needs = len(suspect) != len(asset.original) or not np.array_equal(
                suspect.centers, asset.original.centers)
            stats = None
            try:
                if needs:
                    aligned, stats = realign_with_stats(asset.original, suspect)
                    realigned = True
                result = detect_model(asset.original, aligned, asset.keys, asset.claim, asset.config)
            except AlignmentError:
                self._append_audit(pid, "verify", request, {"error": "alignment_failed"})
                raise
            response = self._truncate(result)
            audit_result = dict(response)
            audit_result["realigned"] = realigned
            if stats is not None:
                audit_result["matched"] = stats.matched
            self._append_audit(pid, "verify", request, audit_result)
            return response

    def challenge_viewpoints(self, asset_id: str, nonce) -> list[Camera]:
        """Keyed challenge cameras on a sphere around the asset, looking at its centre."""
        with self._lock:
            asset = self._asset(asset_id)
        nonce = nonce.encode() if isinstance(nonce, str) else bytes(nonce)
        ctx = _field(TAG_VIEW) + _field(nonce)
        count = self.policy.challenge_view_count
        u = prf_words(asset.keys.k_sel, ctx, 3 * count).astype(np.float64) / 2.0**32
        lo, hi = asset.original.bbox()
        center = (lo + hi) / 2
        radius = max(float(np.linalg.norm(hi - lo)) / 2, 1e-6)
        w, h = self.policy.view_width, self.policy.view_height
        focal = 0.5 * w / np.tan(np.radians(30))
        cams = []
        for i in range(count):
            az = 2 * np.pi * u[3 * i]
            cz = 2 * u[3 * i + 1] - 1
            dist = radius * (2.0 + u[3 * i + 2])
            d = np.array([np.sqrt(1 - cz * cz) * np.cos(az), np.sqrt(1 - cz * cz) * np.sin(az), cz])
            up = (0.0, 0.0, 1.0) if abs(cz) < 0.99 else (0.0, 1.0, 0.0)
            cams.append(Camera.look_at(center + dist * d, center, up=up, focal=focal, width=w,
                                       height=h, near=0.01 * radius, far=dist + 4 * radius))
        return cams

    def export_audit(self, pid: str, token: str) -> list[AuditRecord]:
        with self._lock:
            p = self._authenticate(pid, token)
            if Role(p.role) is not Role.AUDITOR:
                raise AuthorizationError("audit export requires the AUDITOR role")
            return list(self._audit)
