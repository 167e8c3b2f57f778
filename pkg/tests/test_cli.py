import json
import subprocess
import sys

import pytest

from splatmark.cli import main
from splatmark.gsmodel import load_scene
from splatmark.image import read_ppm


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def workspace(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(capsys, "keygen", "--out", tmp_path / "keys.json", "--seed", 1)[0] == 0
    assert run(capsys, "synth", "--out", tmp_path / "scene.ply", "--n", 1200, "--seed", 2)[0] == 0
    return tmp_path


def test_embed_detect_round_trip(workspace, capsys):
    w = workspace
    code, out, _ = run(capsys, "embed", "--scene", w / "scene.ply", "--keys", w / "keys.json",
                       "--claim", "alice", "--bits", 16, "--out", w / "marked.ply")
    assert code == 0 and json.loads(out)["T"] > 0
    assert (w / "marked.ply.json").exists()
    code, out, _ = run(capsys, "detect", "--scene", w / "marked.ply", "--original", w / "scene.ply",
                       "--keys", w / "keys.json", "--claim", "alice", "--bits", 16)
    rep = json.loads(out)
    assert code == 0 and rep["bit_accuracy"] == 1.0 and rep["present"] is True


def test_config_file_mirrors_flags(workspace, capsys):
    w = workspace
    cfg = w / "cfg.json"
    cfg.write_text(json.dumps({"scene": str(w / "scene.ply"), "keys": str(w / "keys.json"),
                               "claim": "bob", "bits": 8, "alpha": 0.02}))
    assert run(capsys, "embed", "--config", cfg, "--out", w / "m.ply")[0] == 0
    rec = json.loads((w / "m.ply.json").read_text())
    assert rec["claim"] == "bob" and rec["config"]["B"] == 8 and rec["config"]["alpha"] == 0.02
    # explicit flag wins
    assert run(capsys, "embed", "--config", cfg, "--bits", 4, "--out", w / "m2.ply")[0] == 0
    assert json.loads((w / "m2.ply.json").read_text())["config"]["B"] == 4


def test_detect_wrong_claim_absent(workspace, capsys):
    w = workspace
    run(capsys, "embed", "--scene", w / "scene.ply", "--keys", w / "keys.json", "--claim", "a",
        "--bits", 8, "--out", w / "m.ply")
    _, out, _ = run(capsys, "detect", "--scene", w / "m.ply", "--original", w / "scene.ply",
                    "--keys", w / "keys.json", "--claim", "b", "--bits", 8)
    assert json.loads(out)["present"] is False


def test_errors_are_json(workspace, capsys):
    code, _, err = run(capsys, "embed", "--scene", workspace / "scene.ply")
    assert code == 2 and json.loads(err)["error"] == "CliError"
    code, _, err = run(capsys, "embed", "--scene", workspace / "missing.ply", "--keys",
                       workspace / "keys.json", "--out", workspace / "x.ply")
    assert code == 1 and "error" in json.loads(err)
    code, _, err = run(capsys, "bogus")
    assert code == 2 and json.loads(err)["error"] == "CliError"


def test_attack_and_render(workspace, capsys):
    w = workspace
    man = w / "atk.json"
    man.write_text(json.dumps([{"level": "model", "kind": "DROPOUT", "params": {"rate": 0.2}},
                               {"level": "image", "kind": "BLUR", "params": {"sigma": 1.0}}]))
    code, out, _ = run(capsys, "attack", "--scene", w / "scene.ply", "--attack-manifest", man,
                       "--out", w / "atk", "--seed", 3)
    arts = json.loads(out)["artifacts"]
    assert code == 0 and [a["file"] for a in arts] == ["00_dropout.ply", "01_blur.ppm"]
    assert len(load_scene(w / "atk" / "00_dropout.ply")) == 960
    code, _, _ = run(capsys, "render", "--scene", w / "scene.ply", "--camera", "orbit:1",
                     "--out", w / "v.ppm")
    assert code == 0 and read_ppm(w / "v.ppm").width == 96


def test_sweep_twice_identical(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    man = tmp_path / "sweep.json"
    man.write_text(json.dumps({"scene": {"synth": {"seed": 1, "n": 1100, "degree": 3}},
                               "cameras": {"count": 1, "width": 32, "height": 32},
                               "attacks": [{"level": "model", "kind": "GAUSS_NOISE",
                                            "params": {"sigma": 0.1}}],
                               "trials": 1}))
    for d in ("a", "b"):
        assert run(capsys, "sweep", "--manifest", man, "--out", tmp_path / d, "--seed", 7)[0] == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "fidelity.csv" in names and "robustness.csv" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    # nothing written outside the declared output directories
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a", "b", "sweep.json"]


def test_portal_flow(workspace, capsys):
    w = workspace
    st = w / "state"
    assert run(capsys, "portal", "init", "--state", st, "--max-queries", 2)[0] == 0
    _, out, _ = run(capsys, "portal", "add-principal", "--state", st, "--id", "v", "--token", "tv")
    assert json.loads(out)["query_budget"] == 2
    run(capsys, "portal", "add-principal", "--state", st, "--id", "aud", "--role", "AUDITOR", "--token", "ta")
    run(capsys, "embed", "--scene", w / "scene.ply", "--keys", w / "keys.json", "--bits", 8, "--out", w / "m.ply")
    _, out, _ = run(capsys, "portal", "register", "--state", st, "--scene", w / "scene.ply",
                    "--keys", w / "keys.json", "--bits", 8)
    asset = json.loads(out)["asset"]
    for _ in range(2):
        code, out, _ = run(capsys, "portal", "verify", "--state", st, "--id", "v", "--token", "tv",
                           "--asset", asset, "--scene", w / "m.ply")
        assert code == 0 and json.loads(out) == {"present": True, "bit_accuracy": 1.0}
    code, _, err = run(capsys, "portal", "verify", "--state", st, "--id", "v", "--token", "tv",
                       "--asset", asset, "--scene", w / "m.ply")
    assert code == 1 and json.loads(err)["code"] == "quota_exceeded"
    _, out, _ = run(capsys, "portal", "audit", "--state", st, "--id", "aud", "--token", "ta")
    recs = [json.loads(x) for x in out.splitlines()]
    assert [r["seq"] for r in recs] == [1, 2, 3]
    keys_text = (w / "keys.json").read_text()
    for h in json.loads(keys_text).values():
        assert h not in out
    _, out, _ = run(capsys, "portal", "challenge", "--state", st, "--asset", asset, "--nonce", "n1")
    assert len(json.loads(out)["cameras"]) == 8
    code, _, err = run(capsys, "portal", "audit", "--state", st, "--id", "v", "--token", "tv")
    assert code == 1 and json.loads(err)["code"] == "forbidden"


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "splatmark.cli", "synth", "--out", str(tmp_path / "s.ply"),
                        "--n", "5"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["n"] == 5
