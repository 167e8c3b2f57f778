import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binomtest

import oracles
from conftest import FIXED_KEYS, random_keys
from splatmark.attacks import ModelAttack, ModelAttackSpec, attack_model
from splatmark.detect import AlignmentError, decode, detect_model, residual
from splatmark.gsmodel import flatten_sh, synth_scene, unflatten_sh
from splatmark.transform import build_carrier_pool, dct_forward, dct_inverse, read_carriers, write_carriers
from splatmark.watermark import EmbedConfig, embed, perturbation_vector


@pytest.fixture(scope="module")
def scene1024():
    return synth_scene(11, 1024, 3)


class TestResidual:
    def test_identical_is_zero(self, small_scene):
        pool = build_carrier_pool(small_scene.sh_len, keys=FIXED_KEYS, claim="c")
        assert not np.any(residual(small_scene, small_scene, pool))

    def test_equals_delta(self, small_scene):
        cfg = EmbedConfig(B=4, alpha=0.03)
        m, rec = embed(small_scene, FIXED_KEYS, "c", cfg)
        pool = build_carrier_pool(small_scene.sh_len, cfg.band, FIXED_KEYS, "c")
        np.testing.assert_allclose(residual(small_scene, m, pool),
                                   perturbation_vector(FIXED_KEYS, "c", cfg, rec.T), atol=1e-9)

    def test_noise_passes_through_linearly(self, small_scene):
        cfg = EmbedConfig(B=4, alpha=0.03)
        m, rec = embed(small_scene, FIXED_KEYS, "c", cfg)
        pool = build_carrier_pool(small_scene.sh_len, cfg.band, FIXED_KEYS, "c")
        delta = perturbation_vector(FIXED_KEYS, "c", cfg, rec.T)
        rng = np.random.default_rng(0)
        # general noise: residual error is the carrier projection of the transformed noise
        noise = rng.normal(scale=0.01, size=small_scene.sh_len)
        z = residual(small_scene, unflatten_sh(m, flatten_sh(m).values + noise), pool)
        np.testing.assert_allclose(z - delta, read_carriers(dct_forward(noise), pool), atol=1e-12)
        # noise confined to carriers: norms agree (orthonormality)
        n = rng.normal(scale=0.01, size=rec.T)
        inband = dct_inverse(write_carriers(np.zeros(small_scene.sh_len), pool, n))
        z = residual(small_scene, unflatten_sh(m, flatten_sh(m).values + inband), pool)
        assert np.linalg.norm(z - delta) == pytest.approx(np.linalg.norm(n), rel=1e-6)

    def test_mismatch_raises(self, small_scene):
        pool = build_carrier_pool(small_scene.sh_len)
        with pytest.raises(AlignmentError, match="realign"):
            residual(small_scene, small_scene.subset(np.arange(10)), pool)


class TestDecode:
    def test_hand_derived_T256_B2(self):
        T, B, alpha = 256, 2, 0.5
        cfg = EmbedConfig(B=B, alpha=alpha, capacity_ratio=1)
        claim = b"hand"
        # codes, payload and subset straight from the oracle keystream
        s = [np.array([2 * b - 1 for b in oracles.keystream_bits(
            FIXED_KEYS.k_seq, oracles.context(claim, b"seq", j), T)], float) for j in (1, 2)]
        b = [2 * x - 1 for x in oracles.keystream_bits(FIXED_KEYS.k_code, oracles.context(claim, b"code"), B)]
        omega = oracles.fisher_yates(FIXED_KEYS.k_sel, oracles.context(claim, b"perm"), T)
        delta = alpha * b[0] * s[0] + alpha * b[1] * s[1]
        S = [sum(s[j][t] * delta[t] for t in omega) for j in range(2)]
        res = decode(delta, FIXED_KEYS, claim, cfg)
        np.testing.assert_allclose(res.scores, S, atol=1e-12)
        assert res.bits.tolist() == b
        cross = abs(float(s[0] @ s[1]))
        for j in range(2):
            assert abs(S[j]) >= alpha * T - alpha * cross - 1e-9
        assert res.bit_accuracy == 1.0 and res.present

    def test_zero_residual(self):
        res = decode(np.zeros(500), FIXED_KEYS, "c", EmbedConfig(B=8))
        assert np.all(res.scores == 0)
        assert np.all(res.bits == 1)
        assert not res.present
        assert res.normalized_margin == 0.0

    @given(st.floats(1e-6, 1e6), st.integers(0, 100))
    def test_scale_invariance(self, c, seed):
        z = np.random.default_rng(seed).normal(size=400)
        cfg = EmbedConfig(B=6)
        assert np.array_equal(decode(c * z, FIXED_KEYS, "c", cfg).bits, decode(z, FIXED_KEYS, "c", cfg).bits)

    def test_tie_maps_to_plus_one(self):
        # a residual orthogonal to code 1 on the subset gives S_1 = 0 exactly
        T = 8
        cfg = EmbedConfig(B=1, capacity_ratio=1)
        from splatmark.keying import derive_spreading_code

        s1 = derive_spreading_code(FIXED_KEYS, "tie", 1, T)
        z = np.zeros(T)
        plus, minus = np.flatnonzero(s1 > 0), np.flatnonzero(s1 < 0)
        if len(plus) and len(minus):
            z[plus[0]] = 1.0
            z[minus[0]] = 1.0
        res = decode(z, FIXED_KEYS, "tie", cfg)
        assert res.scores[0] == 0.0 and res.bits[0] == 1

    def test_budget_linear_scaling(self, scene1024):
        cfg_full = EmbedConfig(B=8, alpha=0.01)
        m, _ = embed(scene1024, FIXED_KEYS, "c", cfg_full)
        mags = {}
        for rho in (0.25, 0.5, 1.0):
            cfg = EmbedConfig(B=8, alpha=0.01, budget=rho)
            r = detect_model(scene1024, m, FIXED_KEYS, "c", cfg)
            mags[rho] = (np.mean(np.abs(r.scores)), r.subset_size)
        for rho in (0.25, 0.5):
            ratio = mags[rho][0] / mags[1.0][0]
            assert ratio == pytest.approx(mags[rho][1] / mags[1.0][1], rel=0.10)

    def test_reference_payload_false(self):
        res = decode(np.ones(300), FIXED_KEYS, "c", EmbedConfig(B=4), reference_payload=False)
        assert res.bit_accuracy is None

    def test_json(self):
        res = decode(np.ones(300), FIXED_KEYS, "c", EmbedConfig(B=4))
        d = json.loads(res.to_json())
        assert set(d) >= {"present", "bits", "scores", "bit_accuracy", "normalized_margin"}


class TestDetectModel:
    def test_round_trip(self, scene1024):
        cfg = EmbedConfig(B=8, alpha=0.01)
        m, _ = embed(scene1024, FIXED_KEYS, "c", cfg)
        r = detect_model(scene1024, m, FIXED_KEYS, "c", cfg)
        assert r.bit_accuracy == 1.0 and r.present
        assert r.normalized_margin > 0.5

    def test_unmarked_absent(self, scene1024):
        r = detect_model(scene1024, scene1024, FIXED_KEYS, "c", EmbedConfig(B=8))
        assert not r.present

    @pytest.mark.parametrize("which", ["k_sel", "k_code", "k_seq"])
    def test_single_wrong_key_binomial(self, scene1024, which):
        cfg = EmbedConfig(B=64, alpha=0.01, capacity_ratio=1)
        m, _ = embed(scene1024, FIXED_KEYS, "c", cfg)
        rng = np.random.default_rng({"k_sel": 1, "k_code": 2, "k_seq": 3}[which])
        correct = 0
        trials = 200
        for _ in range(trials):
            wrong = FIXED_KEYS.replace(**{which: rng.integers(0, 256, 32, dtype=np.uint8).tobytes()})
            r = detect_model(scene1024, m, wrong, "c", cfg)
            correct += int(round(r.bit_accuracy * 64))
        acc = correct / (64 * trials)
        assert abs(acc - 0.5) <= 3 * 0.5 / np.sqrt(trials)
        assert binomtest(correct, 64 * trials, 0.5).pvalue > 0.01

    def test_noise_trend(self, scene1024):
        cfg = EmbedConfig(B=16, alpha=0.002)
        means = []
        for sigma in (0.0, 0.3, 1.0, 3.0):
            accs = []
            for seed in range(20):
                claim = f"n{seed}"
                m, _ = embed(scene1024, FIXED_KEYS, claim, cfg)
                atk = attack_model(m, ModelAttackSpec(ModelAttack.GAUSS_NOISE, sigma, seed))
                accs.append(detect_model(scene1024, atk, FIXED_KEYS, claim, cfg).bit_accuracy)
            means.append(np.mean(accs))
        assert all(a >= b for a, b in zip(means, means[1:]))
        assert means[0] == 1.0 and means[-1] < 0.9


class TestPresenceRule:
    def test_magnitude_rule_fires_on_pure_noise(self, scene1024):
        # noise alone inflates |S_j|; only the signed statistic stays near zero
        noisy = attack_model(scene1024, ModelAttackSpec(ModelAttack.GAUSS_NOISE, 1.0, 0))
        signed = detect_model(scene1024, noisy, FIXED_KEYS, "c", EmbedConfig(B=8, alpha=0.001))
        mag = detect_model(scene1024, noisy, FIXED_KEYS, "c",
                           EmbedConfig(B=8, alpha=0.001, presence_rule="magnitude"))
        assert not signed.present
        assert mag.present

    def test_both_rules_accept_clean_mark(self, scene1024):
        for rule in ("signed", "magnitude"):
            cfg = EmbedConfig(B=8, alpha=0.01, presence_rule=rule)
            m, _ = embed(scene1024, FIXED_KEYS, "c", cfg)
            assert detect_model(scene1024, m, FIXED_KEYS, "c", cfg).present

    def test_false_positive_rates(self, scene1024):
        # heavy noise relative to alpha: magnitude rule always fires, signed rule rarely
        signed = mag = 0
        for seed in range(30):
            noisy = attack_model(scene1024, ModelAttackSpec(ModelAttack.GAUSS_NOISE, 1.0, seed))
            k = random_keys(seed)
            signed += detect_model(scene1024, noisy, k, "c", EmbedConfig(B=8, alpha=0.001)).present
            mag += detect_model(scene1024, noisy, k, "c",
                                EmbedConfig(B=8, alpha=0.001, presence_rule="magnitude")).present
        assert mag == 30
        assert signed <= 10

    def test_no_false_positive_at_attack_strength(self, scene1024):
        for seed in range(30):
            noisy = attack_model(scene1024, ModelAttackSpec(ModelAttack.GAUSS_NOISE, 0.1, seed))
            assert not detect_model(scene1024, noisy, random_keys(seed), "c", EmbedConfig(B=8)).present


def test_detect_random_keys_property():
    s = synth_scene(3, 512, 3)
    for seed in range(5):
        k = random_keys(seed)
        cfg = EmbedConfig(B=4, alpha=0.005)
        m, _ = embed(s, k, "p", cfg)
        assert detect_model(s, m, k, "p", cfg).bit_accuracy == 1.0
