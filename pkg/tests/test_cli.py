import json
import subprocess
import sys

import numpy as np
import pytest

from nativesr import __version__
from nativesr.cli import build_parser, main
from nativesr.config import CONFIG_ENV_VAR, ConfigError, RunConfig, load_config
from nativesr.phantoms import smooth_phantom
from nativesr.volume import Volume, load_nifti, save_nifti


@pytest.fixture
def gt_path(tmp_path):
    p = tmp_path / "gt.nii.gz"
    save_nifti(smooth_phantom((16, 16, 16), seed=0), p)
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- config ---------------------------------------------------------------------


def test_config_roundtrip_and_strict(tmp_path):
    cfg = RunConfig.from_dict({"overlap": 8, "constants": {"lambda_fft": 1e-5}})
    assert cfg.constants.lambda_fft == 1e-5 and cfg.overlap == 8
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"overlapp": 8})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"constants": {"gamma": 1, "nope": 2}})
    with pytest.raises(ConfigError):
        RunConfig(jobs=0)
    assert cfg.override(overlap=None, jobs=3).jobs == 3


def test_config_env_var(tmp_path, monkeypatch):
    (tmp_path / "c.json").write_text(json.dumps({"base_seed": 42}))
    monkeypatch.setenv(CONFIG_ENV_VAR, str(tmp_path / "c.json"))
    assert load_config().base_seed == 42
    assert load_config(None).hash() == RunConfig(base_seed=42).hash()
    monkeypatch.delenv(CONFIG_ENV_VAR)
    assert load_config() == RunConfig()
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


# -- parser ---------------------------------------------------------------------------


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text
            if action.help is None:
                pytest.fail(f"{name}: {action.dest} undocumented")


def test_unknown_flag_is_error(gt_path):
    with pytest.raises(SystemExit) as exc:
        main(["route", str(gt_path), "--bogus"])
    assert exc.value.code != 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "nativesr", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout


# -- commands -----------------------------------------------------------------------


def test_reorient_ras(tmp_path, gt_path, capsys):
    code, _, _ = run(["reorient", gt_path, tmp_path / "o.nii.gz"], capsys)
    assert code == 0
    side = json.loads((tmp_path / "o.json").read_text())
    assert side["reorientation"] == {"permutation": [0, 1, 2], "flips": [False, False, False]}
    assert np.array_equal(load_nifti(tmp_path / "o.nii.gz").data, load_nifti(gt_path).data)


def test_reorient_lps(tmp_path, capsys):
    data = np.random.default_rng(0).normal(size=(4, 5, 6))
    src = Volume(data, (1, 1, 1), np.diag([-1.0, -1.0, 1.0]))
    save_nifti(src, tmp_path / "lps.nii")
    assert run(["reorient", tmp_path / "lps.nii", tmp_path / "ras.nii"], capsys)[0] == 0
    out = load_nifti(tmp_path / "ras.nii")
    assert np.array_equal(out.data, data[::-1, ::-1, :])
    from nativesr.volume import Reorientation

    inv = Reorientation.from_dict(json.loads((tmp_path / "ras.json").read_text())["inverse"])
    assert np.array_equal(inv.apply(out).data, data)


def test_reorient_bad_file(tmp_path, capsys):
    (tmp_path / "bad.nii").write_bytes(b"junk")
    code, _, err = run(["reorient", tmp_path / "bad.nii", tmp_path / "x.nii"], capsys)
    assert code != 0 and "error" in err


def test_degrade(tmp_path, gt_path, capsys):
    code, _, _ = run(["degrade", gt_path, tmp_path / "d.nii.gz", "--volume", 5, "--aniso-bin", 1,
                      "--seed", 7], capsys)
    assert code == 0
    out = load_nifti(tmp_path / "d.nii.gz")
    assert out.spacing == (1.0, 1.0, 1.0) and out.shape == (16, 16, 16)
    side = json.loads((tmp_path / "d.json").read_text())
    assert sorted(side["spec"]["triplet"]) == [1.0, 1.0, 5.0]
    assert side["spec"]["cell"] == "V5-A1" and side["expert"] == "V5-A1"
    assert side["version"] == __version__ and len(side["config_hash"]) == 16
    run(["degrade", gt_path, tmp_path / "e.nii.gz", "--volume", 5, "--aniso-bin", 1, "--seed", 7], capsys)
    assert (tmp_path / "d.nii.gz").read_bytes() == (tmp_path / "e.nii.gz").read_bytes()


def test_degrade_protocol(tmp_path, gt_path, capsys):
    code, _, _ = run(["degrade", gt_path, tmp_path / "p.nii", "--protocol", "volbrain", "--seed", 1], capsys)
    assert code == 0
    assert json.loads((tmp_path / "p.json").read_text())["spec"]["source"].startswith("protocol:")


@pytest.mark.parametrize("args", [["--volume", 1.2, "--aniso-bin", 1], ["--volume", 2.0, "--aniso-bin", 1], []])
def test_degrade_infeasible(tmp_path, gt_path, capsys, args):
    code, _, err = run(["degrade", gt_path, tmp_path / "x.nii", *args], capsys)
    assert code != 0 and err


def test_degrade_requires_1mm(tmp_path, capsys):
    save_nifti(Volume(np.ones((4, 4, 4)), (2, 2, 2)), tmp_path / "c.nii")
    assert run(["degrade", tmp_path / "c.nii", tmp_path / "x.nii", "--volume", 5, "--aniso-bin", 1], capsys)[0] != 0
    code, _, _ = run(["degrade", tmp_path / "c.nii", tmp_path / "x.nii", "--volume", 5, "--aniso-bin", 1,
                      "--preprocess"], capsys)
    assert code == 0 and load_nifti(tmp_path / "x.nii").shape == (8, 8, 8)


def test_route(tmp_path, capsys):
    save_nifti(Volume(np.zeros((2, 2, 2)), (1, 1, 5)), tmp_path / "a.nii")
    save_nifti(Volume(np.zeros((2, 2, 2)), (0.9, 0.9, 0.9)), tmp_path / "b.nii")
    assert run(["route", tmp_path / "a.nii"], capsys)[:2] == (0, "V5-A1\n")
    assert run(["route", tmp_path / "b.nii"], capsys)[:2] == (0, "none\n")
    assert run(["route", tmp_path / "missing.nii"], capsys)[0] != 0


def test_curriculum(capsys):
    code, out, _ = run(["curriculum", "--format", "json"], capsys)
    assert code == 0 and len(json.loads(out)["steps"]) == 18
    code, out, _ = run(["curriculum", "--format", "dot"], capsys)
    assert code == 0 and out.count("->") == 17
    assert run(["curriculum", "--format", "yaml"], capsys)[0] != 0


def test_metrics(tmp_path, gt_path, capsys):
    code, out, _ = run(["metrics", gt_path, gt_path], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["metrics"]["psnr"] == "+inf" and doc["metrics"]["cc"] == pytest.approx(1.0)
    labels = Volume(np.random.default_rng(0).integers(0, 3, size=(16, 16, 16)).astype(float))
    save_nifti(labels, tmp_path / "l.nii")
    code, out, _ = run(["metrics", gt_path, gt_path, "--labels-a", tmp_path / "l.nii",
                        "--labels-b", tmp_path / "l.nii"], capsys)
    assert json.loads(out)["metrics"]["dice"] == 1.0
    save_nifti(Volume(np.ones((2, 2, 2))), tmp_path / "small.nii")
    assert run(["metrics", gt_path, tmp_path / "small.nii"], capsys)[0] != 0


FAIL_SCRIPT = "import sys\nsys.stderr.write('model crashed\\n')\nsys.exit(2)\n"


@pytest.fixture
def eval_inputs(tmp_path):
    seeds = tmp_path / "seeds"
    seeds.mkdir()
    save_nifti(smooth_phantom((12, 12, 12), seed=3), seeds / "subj01.nii.gz")
    (tmp_path / "fail.py").write_text(FAIL_SCRIPT)
    methods = {"methods": [{"type": "reference"},
                           {"name": "broken", "command": [sys.executable, str(tmp_path / "fail.py")]}]}
    (tmp_path / "methods.json").write_text(json.dumps(methods))
    (tmp_path / "run.json").write_text(json.dumps({"realizations": 1, "base_seed": 5}))
    return tmp_path


def test_evaluate_smoke_and_failures(eval_inputs, capsys):
    t = eval_inputs
    argv = ["evaluate", "--seeds", t / "seeds", "--methods", t / "methods.json",
            "--config", t / "run.json", "--out", t / "out1"]
    code, _, err = run(argv, capsys)
    assert code == 0 and "warning" in err
    raw = (t / "out1" / "raw.csv").read_text().splitlines()
    ref_rows = [l for l in raw if l.startswith("Reference (Input),") and ",psnr," in l]
    broken = [l for l in raw if l.startswith("broken,")]
    assert len(ref_rows) == 18
    assert broken and all(l.endswith(",failed") for l in broken)
    manifest = json.loads((t / "out1" / "manifest.json").read_text())
    assert len(manifest["failures"]) == 18 and "exit status 2" in manifest["failures"][0]["message"]
    for name in ("report.md", "report.csv", "report.json"):
        assert (t / "out1" / name).exists()

    argv[-1] = t / "out2"
    run(argv + ["--jobs", 3], capsys)
    for name in ("raw.csv", "report.md", "report.csv", "report.json"):
        assert (t / "out1" / name).read_bytes() == (t / "out2" / name).read_bytes()


def test_evaluate_flags_override_config(eval_inputs, capsys):
    t = eval_inputs
    code, _, _ = run(["evaluate", "--seeds", t / "seeds", "--config", t / "run.json", "--out", t / "o",
                      "--realizations", 2], capsys)
    assert code == 0
    manifest = json.loads((t / "o" / "manifest.json").read_text())
    assert manifest["cases"] == 36 and manifest["config"]["realizations"] == 2


def test_evaluate_bad_manifest(eval_inputs, capsys):
    t = eval_inputs
    (t / "bad.json").write_text(json.dumps({"methods": [{"name": "x", "type": "magic"}]}))
    assert run(["evaluate", "--seeds", t / "seeds", "--methods", t / "bad.json", "--out", t / "o"], capsys)[0] != 0
    (t / "empty").mkdir()
    assert run(["evaluate", "--seeds", t / "empty", "--out", t / "o"], capsys)[0] != 0


def test_phantom_command(tmp_path, capsys):
    assert run(["phantom", "--out", tmp_path / "ph", "--count", 2, "--size", 8], capsys)[0] == 0
    assert sorted(p.name for p in (tmp_path / "ph").iterdir()) == ["phantom_00.nii.gz", "phantom_01.nii.gz"]
