"""Command-line entry point.

Every subcommand accepts ``--config FILE``: a JSON object whose keys mirror the
long flag names (``alpha``, ``bits``, ``attack_manifest`` ...). Explicit flags
win over the config file. Failures exit nonzero with a JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from splatmark.attacks import attack_image, attack_model, load_manifest, realign_with_stats
from splatmark.detect import detect_model
from splatmark.gsmodel import load_scene, save_ply, synth_scene
from splatmark.image import encode_ppm
from splatmark.keying import KeySet, load_keyset
from splatmark.portal import Portal, PortalPolicy, Role
from splatmark.render import Camera, orbit_cameras, render
from splatmark.sweep import SweepManifest, atomic_write, run_sweep
from splatmark.watermark import EmbedConfig, embed

# flag defaults, applied after merging the config file
DEFAULTS = {
    "claim": "owner",
    "bits": 32,
    "alpha": 0.01,
    "protocol": "FIXED_PER_BIT",
    "band": "0.10,0.18",
    "budget": 1.0,
    "seed": None,
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    p.add_argument("--config", help="JSON file mirroring the long flags")
    p.add_argument("--seed", type=int)
    spec = {
        "scene": dict(help="input scene (.ply or .npz)"),
        "keys": dict(help="keyset JSON file or directory of k_sel/k_code/k_seq"),
        "claim": dict(help="ownership claim string"),
        "bits": dict(type=int, help="payload length B"),
        "alpha": dict(type=float, help="embedding amplitude"),
        "protocol": dict(choices=["FIXED_PER_BIT", "FIXED_TOTAL"]),
        "band": dict(help="carrier band as 'lo,hi' fractions"),
        "budget": dict(type=float, help="detector subset fraction"),
        "attack-manifest": dict(help="JSON attack list"),
        "camera": dict(help="camera JSON file, or 'orbit:K' for the K-th default orbit view"),
        "out": dict(help="output path"),
    }
    for n in names:
        p.add_argument(f"--{n}", **spec[n])


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="splatmark", description="Spread-spectrum watermarking for Gaussian-splat scenes")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", help="write a fresh keyset")
    _common(p, "out")

    p = sub.add_parser("synth", help="write a synthetic scene")
    _common(p, "out")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--extent", type=float, default=1.0)

    p = sub.add_parser("embed", help="watermark a scene")
    _common(p, "scene", "keys", "claim", "bits", "alpha", "protocol", "band", "budget", "out")

    p = sub.add_parser("detect", help="detect against the original scene")
    _common(p, "scene", "keys", "claim", "bits", "alpha", "protocol", "band", "budget", "out")
    p.add_argument("--original", help="unwatermarked original scene")
    p.add_argument("--presence-rule", choices=["signed", "magnitude"])

    p = sub.add_parser("attack", help="apply an attack manifest")
    _common(p, "scene", "attack-manifest", "camera", "out")

    p = sub.add_parser("render", help="render a scene to PPM")
    _common(p, "scene", "camera", "out")

    p = sub.add_parser("sweep", help="fidelity / robustness sweep")
    _common(p, "keys", "out")
    p.add_argument("--manifest", help="sweep manifest JSON")

    p = sub.add_parser("portal", help="verification portal")
    psub = p.add_subparsers(dest="portal_command", required=True, parser_class=_Parser)
    for name in ("init", "add-principal", "register", "verify", "challenge", "audit"):
        q = psub.add_parser(name)
        q.add_argument("--state", required=True, help="portal state directory")
        if name == "init":
            _common(q)
            q.add_argument("--max-queries", type=int, default=32)
            q.add_argument("--truncation", default="DECISION_PLUS_ACCURACY",
                           choices=["FULL", "DECISION_ONLY", "DECISION_PLUS_ACCURACY"])
            q.add_argument("--views", type=int, default=8)
        elif name == "add-principal":
            _common(q)
            q.add_argument("--id", required=True)
            q.add_argument("--role", default="VERIFIER", choices=["VERIFIER", "AUDITOR"])
            q.add_argument("--token")
        elif name == "register":
            _common(q, "scene", "keys", "claim", "bits", "alpha", "protocol", "band", "budget")
        elif name == "verify":
            _common(q, "scene")
            q.add_argument("--id", required=True)
            q.add_argument("--token", required=True)
            q.add_argument("--asset", required=True)
        elif name == "challenge":
            _common(q, "out")
            q.add_argument("--asset", required=True)
            q.add_argument("--nonce", required=True)
        else:
            _common(q, "out")
            q.add_argument("--id", required=True)
            q.add_argument("--token", required=True)
    return ap


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    cfg = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
        if not isinstance(cfg, dict):
            raise CliError("config file must hold a JSON object")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise CliError(f"unknown config key {key!r}")
        if getattr(args, attr) is None:
            setattr(args, attr, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise CliError(f"--{n.replace('_', '-')} is required")


def _band(text) -> tuple[float, float]:
    if isinstance(text, (list, tuple)):
        lo, hi = text
    else:
        lo, hi = (float(t) for t in str(text).split(","))
    return float(lo), float(hi)


def _embed_config(args) -> EmbedConfig:
    extra = {}
    if getattr(args, "presence_rule", None):
        extra["presence_rule"] = args.presence_rule
    return EmbedConfig(B=int(args.bits), alpha=float(args.alpha), protocol=args.protocol,
                       band=_band(args.band), budget=float(args.budget), **extra)


def _camera(args, scene) -> Camera:
    spec = args.camera or "orbit:0"
    if str(spec).startswith("orbit:"):
        k = int(spec.split(":", 1)[1])
        cams = orbit_cameras(scene, count=max(4, k + 1))
        return cams[k]
    return Camera.from_dict(json.loads(Path(spec).read_text()))


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        atomic_write(Path(out), text.encode())
    else:
        sys.stdout.write(text)


def cmd_keygen(args) -> int:
    _need(args, "out")
    rng = None if args.seed is None else np.random.default_rng(args.seed)
    keys = KeySet.generate(rng)
    atomic_write(Path(args.out), keys.to_json().encode())
    Path(args.out).chmod(0o600)
    _emit({"keys": args.out, "fingerprint": keys.fingerprint()})
    return 0


def cmd_synth(args) -> int:
    _need(args, "out")
    scene = synth_scene(args.seed or 0, args.n, args.degree, args.extent)
    atomic_write(Path(args.out), save_ply(scene))
    _emit({"scene": args.out, "n": len(scene), "sh_degree": scene.sh_degree})
    return 0


def cmd_embed(args) -> int:
    _need(args, "scene", "keys", "out")
    scene = load_scene(args.scene)
    keys = load_keyset(args.keys)
    marked, record = embed(scene, keys, args.claim, _embed_config(args))
    out = Path(args.out)
    atomic_write(out, save_ply(marked))
    atomic_write(out.with_suffix(out.suffix + ".json"), record.to_json().encode())
    _emit({"scene": str(out), "record": str(out) + ".json", "T": record.T})
    return 0


def cmd_detect(args) -> int:
    _need(args, "scene", "original", "keys")
    original = load_scene(args.original)
    suspect = load_scene(args.scene)
    keys = load_keyset(args.keys)
    realigned = False
    if len(suspect) != len(original) or not np.array_equal(suspect.centers, original.centers):
        suspect, _ = realign_with_stats(original, suspect)
        realigned = True
    res = detect_model(original, suspect, keys, args.claim, _embed_config(args))
    res.notes["realigned"] = realigned
    _emit(res.to_dict(), args.out)
    return 0


def cmd_attack(args) -> int:
    _need(args, "scene", "attack_manifest", "out")
    scene = load_scene(args.scene)
    specs = load_manifest(args.attack_manifest)
    out = Path(args.out)
    written = []
    for i, spec in enumerate(specs):
        if args.seed is not None:
            spec = type(spec)(spec.kind, spec.value, args.seed)
        if spec.level == "model":
            name = f"{i:02d}_{spec.kind.value.lower()}.ply"
            atomic_write(out / name, save_ply(attack_model(scene, spec)))
        else:
            name = f"{i:02d}_{spec.kind.value.lower()}.ppm"
            img = render(scene, _camera(args, scene))
            atomic_write(out / name, encode_ppm(attack_image(img, spec)))
        written.append({"attack": spec.label(), "file": name})
    _emit({"out": str(out), "artifacts": written})
    return 0


def cmd_render(args) -> int:
    _need(args, "scene", "out")
    scene = load_scene(args.scene)
    img = render(scene, _camera(args, scene))
    atomic_write(Path(args.out), encode_ppm(img))
    _emit({"image": args.out, "width": img.width, "height": img.height})
    return 0


def cmd_sweep(args) -> int:
    _need(args, "manifest")
    m = SweepManifest.load(args.manifest)
    if args.seed is not None:
        m.seed = args.seed
    keys = load_keyset(args.keys) if args.keys else None
    summary = run_sweep(m, keys, out_dir=args.out)
    _emit({"out": args.out or m.out_dir, "files": summary["files"]})
    return 0


def cmd_portal(args) -> int:
    state = Path(args.state)
    sc = args.portal_command
    if sc == "init":
        if (state / "policy.json").exists():
            raise CliError(f"portal state already initialised at {state}")
        state.mkdir(parents=True, exist_ok=True)
        pol = PortalPolicy(max_queries=args.max_queries, truncation=args.truncation,
                           challenge_view_count=args.views)
        Portal(pol, state)
        _emit({"state": str(state), "policy": pol.to_dict()})
        return 0
    if not (state / "policy.json").exists():
        raise CliError(f"no portal state at {state}; run 'portal init' first")
    portal = Portal(state_dir=state)
    if sc == "add-principal":
        p = portal.add_principal(args.id, Role(args.role), token=args.token)
        _emit({"id": p.id, "token": p.token, "role": p.role.value, "query_budget": p.query_budget})
    elif sc == "register":
        _need(args, "scene", "keys")
        aid = portal.register_asset(load_scene(args.scene), load_keyset(args.keys), args.claim,
                                    _embed_config(args))
        _emit({"asset": aid})
    elif sc == "verify":
        _need(args, "scene")
        _emit(portal.verify_model(args.id, args.token, args.asset, load_scene(args.scene)))
    elif sc == "challenge":
        cams = portal.challenge_viewpoints(args.asset, args.nonce)
        _emit({"cameras": [c.to_dict() for c in cams]}, args.out)
    else:
        recs = portal.export_audit(args.id, args.token)
        text = "".join(r.to_json() + "\n" for r in recs)
        if args.out:
            atomic_write(Path(args.out), text.encode())
        else:
            sys.stdout.write(text)
    return 0


COMMANDS = {
    "keygen": cmd_keygen,
    "synth": cmd_synth,
    "embed": cmd_embed,
    "detect": cmd_detect,
    "attack": cmd_attack,
    "render": cmd_render,
    "sweep": cmd_sweep,
    "portal": cmd_portal,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args = _merge_config(args)
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - reported as JSON
        err = {"error": type(exc).__name__, "message": str(exc)}
        code = getattr(exc, "code", None)
        if isinstance(code, str):
            err["code"] = code
        sys.stderr.write(json.dumps(err) + "\n")
        return 2 if isinstance(exc, CliError) else 1


if __name__ == "__main__":
    sys.exit(main())
