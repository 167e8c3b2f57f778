import json
import math

import numpy as np
import pytest

from conftest import FIXED_KEYS
from splatmark.attacks import ImageAttack, ImageAttackSpec, ModelAttack, ModelAttackSpec, table2_matrix
from splatmark.gsmodel import save_ply, synth_scene
from splatmark.image import read_ppm
from splatmark.sweep import (
    ManifestValidationError,
    SweepManifest,
    atomic_write,
    read_fidelity_csv,
    run_attack,
    run_sweep,
)
from splatmark.watermark import EmbedConfig, embed

SMALL = dict(
    scene={"synth": {"seed": 3, "n": 1200, "degree": 3}},
    cameras={"count": 2, "width": 40, "height": 40},
    attacks=[{"level": "model", "kind": "DROPOUT", "params": {"rate": 0.2}, "seed": 1},
             {"level": "image", "kind": "JPEG_LIKE", "params": {"quality": 50}, "seed": 1}],
    trials=2,
    seed=5,
)


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    summary = run_sweep(SweepManifest.from_dict(SMALL), out_dir=out)
    return out, summary


class TestManifest:
    def test_defaults(self):
        m = SweepManifest()
        assert m.alphas == (0.1, 0.01, 0.001) and m.Bs == (32, 48, 64)
        assert m.access_vector == "[0,1,1,0,0,1,0]"

    def test_round_trip(self):
        m = SweepManifest.from_dict(SMALL)
        assert SweepManifest.from_dict(json.loads(json.dumps(m.to_dict()))) == m

    def test_unknown_field(self):
        with pytest.raises(ManifestValidationError, match="unknown"):
            SweepManifest.from_dict({"alphaz": [0.1]})

    def test_empty_grid(self):
        with pytest.raises(ManifestValidationError):
            SweepManifest(alphas=())

    def test_missing_ply(self, tmp_path):
        with pytest.raises(ManifestValidationError, match="not found"):
            SweepManifest(scene={"ply": str(tmp_path / "nope.ply")})

    def test_ply_scene(self, tmp_path):
        p = tmp_path / "s.ply"
        save_ply(synth_scene(0, 10), p)
        assert SweepManifest(scene={"ply": str(p)}).scene["ply"] == str(p)

    def test_table2_shortcut(self):
        assert SweepManifest(attacks="table2", seed=4).attack_specs() == table2_matrix(4)

    def test_black_box_rejects_model_attacks(self, tmp_path):
        m = SweepManifest.from_dict(dict(SMALL, access_vector="[0,0,0,0,1,1,0]"))
        with pytest.raises(ManifestValidationError, match="access_Mw"):
            run_sweep(m, out_dir=tmp_path)
        assert not any(tmp_path.iterdir())

    def test_bad_vector(self):
        with pytest.raises(ManifestValidationError):
            SweepManifest(access_vector="[0,1]")


class TestOutputs:
    def test_fidelity_grid(self, sweep_dir):
        out, _ = sweep_dir
        fid = read_fidelity_csv(out / "fidelity.csv")
        assert len(fid) == 9
        assert all(math.isfinite(p) and math.isfinite(s) for p, s in fid.values())
        header = (out / "fidelity.csv").read_text().splitlines()[0]
        assert header == "alpha,B32_psnr,B32_ssim,B48_psnr,B48_ssim,B64_psnr,B64_ssim"

    def test_robustness_rows(self, sweep_dir):
        out, _ = sweep_dir
        lines = (out / "robustness.csv").read_text().splitlines()
        assert lines[0] == "attack,B,protocol,alpha,trials,mean_bit_accuracy,detector_domain"
        assert len(lines) == 1 + 2 * 3
        domains = {ln.rsplit(",", 1)[1] for ln in lines[1:]}
        assert domains == {"model", "model-source"}

    def test_diff_images(self, sweep_dir):
        out, summary = sweep_dir
        ppms = [f for f in summary["files"] if f.endswith(".ppm")]
        assert len(ppms) == 9
        img = read_ppm(out / "diff_a0.1_B32.ppm")
        assert (img.width, img.height) == (40, 40)

    def test_summary(self, sweep_dir):
        out, summary = sweep_dir
        data = json.loads((out / "sweep.json").read_text())
        assert data["schema_version"] == 1
        assert data["access_vector"] == "[0,1,1,0,0,1,0]" and data["regime"] == "GREY"
        assert data == json.loads(json.dumps(summary))

    def test_no_stray_files(self, sweep_dir):
        out, summary = sweep_dir
        assert sorted(p.name for p in out.iterdir()) == sorted(summary["files"] + ["sweep.json"])

    def test_deterministic(self, sweep_dir, tmp_path):
        out, summary = sweep_dir
        run_sweep(SweepManifest.from_dict(SMALL), out_dir=tmp_path)
        for name in summary["files"] + ["sweep.json"]:
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


class TestRunAttack:
    def test_model_attack_realigned(self):
        s = synth_scene(6, 1200, 3)
        cfg = EmbedConfig(B=8, alpha=0.01)
        m, _ = embed(s, FIXED_KEYS, "c", cfg)
        oc = run_attack(s, m, FIXED_KEYS, "c", cfg, ModelAttackSpec(ModelAttack.CLONE, 0.2, 0))
        assert oc.detector_domain == "model" and oc.result.bit_accuracy == 1.0

    def test_image_attack_scores_view(self):
        s = synth_scene(6, 400, 2)
        cfg = EmbedConfig(B=4, alpha=0.01, capacity_ratio=1)
        m, _ = embed(s, FIXED_KEYS, "c", cfg)
        oc = run_attack(s, m, FIXED_KEYS, "c", cfg, ImageAttackSpec(ImageAttack.BRIGHTNESS, 0.5, 0))
        assert oc.detector_domain == "model-source"
        assert oc.image_psnr < 99 and oc.result.notes["image_psnr"] == oc.image_psnr


def test_atomic_write(tmp_path):
    p = tmp_path / "sub" / "f.bin"
    atomic_write(p, b"abc")
    atomic_write(p, b"xyz")
    assert p.read_bytes() == b"xyz"
    assert [q.name for q in p.parent.iterdir()] == ["f.bin"]
