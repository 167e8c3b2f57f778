"""Monte Carlo adversary that probes a portal with decision-only feedback.

The attacker holds the watermarked model but no keys. It spends its query
budget searching for the weakest noise that makes the portal answer
"absent", then tries fresh noise draws at that strength. Removal success is
scored with the keys: the fraction of payload bits the final submission
decodes to the wrong value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatmark.attacks import ModelAttack, ModelAttackSpec, attack_model
from splatmark.detect import detect_model
from splatmark.gsmodel import synth_scene
from splatmark.keying import KeySet
from splatmark.portal import Portal, PortalPolicy, QuotaExceededError, Truncation
from splatmark.watermark import EmbedConfig, embed


@dataclass
class ProbeOutcome:
    seed: int
    queries: int
    feedback_bits: int
    sigma: float
    evaded: bool
    bit_flip_fraction: float
    over_budget_refused: bool


def run_probe(seed: int, max_queries: int = 32, B: int = 32, n: int = 1024,
              sigma_hi: float = 256.0, search_steps: int = 16) -> ProbeOutcome:
    rng = np.random.default_rng(seed)
    scene = synth_scene(seed, n, 3)
    keys = KeySet.generate(rng)
    cfg = EmbedConfig(B=B, alpha=0.01)
    claim = f"probe-{seed}"
    marked, _ = embed(scene, keys, claim, cfg)

    portal = Portal(PortalPolicy(max_queries=max_queries, truncation=Truncation.DECISION_ONLY))
    asset = portal.register_asset(scene, keys, claim, cfg)
    attacker = portal.add_principal("attacker")
    feedback_bits = 0
    queries = 0

    def ask(candidate) -> bool:
        nonlocal feedback_bits, queries
        resp = portal.verify_model(attacker.id, attacker.token, asset, candidate)
        assert set(resp) == {"present"}
        queries += 1
        feedback_bits += 1
        return resp["present"]

    # bisection on relative noise strength
    lo, hi = 0.0, sigma_hi
    noise_seed = seed * 1000
    best = None
    for _ in range(search_steps):
        mid = 0.5 * (lo + hi)
        cand = attack_model(marked, ModelAttackSpec(ModelAttack.GAUSS_NOISE, mid, noise_seed))
        noise_seed += 1
        if ask(cand):
            lo = mid
        else:
            hi = mid
            best = (mid, cand)
    # spend the rest on fresh draws just above the threshold
    while queries < max_queries:
        cand = attack_model(marked, ModelAttackSpec(ModelAttack.GAUSS_NOISE, hi, noise_seed))
        noise_seed += 1
        if not ask(cand):
            best = (hi, cand)
        else:
            hi *= 1.05
    refused = False
    try:
        ask(marked)
    except QuotaExceededError:
        refused = True

    sigma, final = best if best is not None else (hi, attack_model(
        marked, ModelAttackSpec(ModelAttack.GAUSS_NOISE, hi, noise_seed)))
    truth = detect_model(scene, final, keys, claim, cfg)
    return ProbeOutcome(seed, queries, feedback_bits, sigma, not truth.present,
                        1.0 - truth.bit_accuracy, refused)


def run_harness(seeds=range(10), **kw) -> list[ProbeOutcome]:
    return [run_probe(s, **kw) for s in seeds]
