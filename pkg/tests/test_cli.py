import json
import math
import subprocess
import sys

import jsonschema
import pytest

from pseudolab.cli import SCHEMAS, load_schema, parse_complex, parse_polar, run

CASES = {
    "spectrum": ["spectrum", "--model=rotated_ho", "--theta=0.785398", "--N=60", "--count=5"],
    "pseudospectrum": ["pseudospectrum", "--model=rotated_ho", "--theta=0.785398", "--N=60",
                       "--region=0,20,-10,10", "--res=12,10", "--levels=0.1,0.01"],
    "pseudomode": ["pseudomode", "--model=rotated_ho", "--h=0.03125",
                   "--z-polar=1.118033988749895,0.321750554"],
    "residual-scan": ["residual-scan", "--model=rotated_ho", "--theta=0.785398", 
                      f"--z-polar={math.sqrt(17)!r},{math.atan(4) - math.pi / 4!r}", "--h-list=0.125,0.0625,0.03125", "--terms=3"],
    "projections": ["projections", "--theta=0.785398", "--kmax=40"],
    "quadratic-identify": ["quadratic-identify", "--omega=2", "--alpha=0.5", "--beta=0.25"],
    "swanson-check": ["swanson-check", "--omega=2", "--alpha=0.5", "--beta=0.25", "--n=2048"],
    "perturb-cloud": ["perturb-cloud", "--theta=0.785398", "--N=40", "--eps=1e-2",
                      "--samples=3", "--seed=1", "--res=21,21"],
    "jordan-sweep": ["jordan-sweep", "--eps-range=0.5,1.0,6", "--N=80"],
    "semigroup": ["semigroup", "--N=200", "--interval=-15,15", "--t-list=0,0.5,1"],
}


def _json_outputs(d):
    return sorted(p for p in d.iterdir() if p.suffix == ".json")


@pytest.mark.parametrize("name", sorted(CASES))
def test_command_outputs_validate(name, tmp_path):
    argv = CASES[name] + [f"--out={tmp_path}", "--workers=1"]
    assert run(argv) == 0
    files = _json_outputs(tmp_path)
    assert any(p.name.endswith(".manifest.json") for p in files)
    for p in files:
        jsonschema.validate(json.loads(p.read_text()), load_schema(p.name))


def test_pseudomode_reference_value(tmp_path):
    assert run(CASES["pseudomode"] + [f"--out={tmp_path}"]) == 0
    rep = json.loads((tmp_path / "pseudomode.json").read_text())
    assert rep["residual"] == pytest.approx(2.5041e-4, rel=0.05)


def test_schema_table_complete():
    for name in SCHEMAS:
        assert load_schema(name)["type"] == "object"


def test_exit_codes(tmp_path):
    assert run(["nosuch"]) == 1
    assert run(["spectrum", "--model=airy", "--bogus=1"]) == 1
    assert run(["perturb-cloud", "--eps=1e-2"]) == 1           # seed is required
    assert run(["pseudomode", "--model=rotated_ho", "--z=-1,0", f"--out={tmp_path}"]) == 2
    assert run(["residual-scan", "--model=rotated_ho", "--theta=0.785398", "--z=1,4",
                f"--out={tmp_path}"]) == 2
    assert run(["pseudomode", "--model=rotated_ho", "--z=1,1", "--plateau=1,2",
                "--support=1.5,3", f"--out={tmp_path}"]) == 1


def test_replay_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(CASES["spectrum"] + [f"--out={a}"]) == 0
    assert run([f"--replay={a / 'spectrum.manifest.json'}", f"--replay-out={b}"]) == 0
    for f in ("spectrum.csv", "spectrum.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PSEUDOLAB_OUTPUT_DIR", str(tmp_path))
    assert run(CASES["quadratic-identify"]) == 0
    assert (tmp_path / "quadratic.json").exists()


def test_value_parsers():
    assert parse_complex("1,-2.5") == 1 - 2.5j
    assert parse_complex("3") == 3
    assert parse_polar(f"2,{math.pi / 2}") == pytest.approx(2j)


def test_entry_point_version():
    out = subprocess.run([sys.executable, "-m", "pseudolab.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("pseudolab")
