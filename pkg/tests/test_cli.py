import json
from pathlib import Path

import pytest

from mepsnet.cli import load_config, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_runtime_error_exits_1(capsys, tmp_path):
    (tmp_path / "empty").mkdir()
    code, _, err = run(capsys, "generate", "--clean", tmp_path / "empty", "--out", tmp_path / "o")
    assert code == 1 and "error" in err


def test_generate(capsys, clean_dirs, tmp_path):
    code, out, _ = run(capsys, "generate", "--clean", clean_dirs / "train", "--test-clean", clean_dirs / "test",
                       "--level", "moderate", "--seed", 3, "--variants", 2, "--out", tmp_path / "d")
    assert code == 0
    summary = json.loads(out)
    assert summary["counts"] == {"train": 16, "test": 4}
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert all(len(e["regions"]) == 4 for e in manifest["entries"])


def test_config_overrides_and_errors(tmp_path):
    cfg = load_config(str(CONFIGS / "tiny.json"), ["train.iters=3", "model.n_experts=1"], seed=9)
    assert cfg["train"]["iters"] == 3 and cfg["model"]["n_experts"] == 1 and cfg["train"]["seed"] == 9
    with pytest.raises(ValueError, match="override"):
        load_config(None, ["iters=3"])
    with pytest.raises(ValueError):
        load_config(None, ["model.n_experts=0"])


def test_train_eval_restore_features(capsys, mini_shdd, tmp_path):
    run_dir = tmp_path / "run"
    code, out, _ = run(capsys, "train", "--config", CONFIGS / "tiny.json", "--data", mini_shdd, "--out", run_dir,
                       "--set", "train.iters=2", "--seed", 4)
    assert code == 0 and "final.meps" in out
    echoed = json.loads((run_dir / "config.json").read_text())
    assert echoed["train"]["iters"] == 2 and echoed["train"]["seed"] == 4

    code, out, _ = run(capsys, "train", "--config", CONFIGS / "tiny.json", "--data", mini_shdd, "--out", run_dir,
                       "--set", "train.iters=3", "--resume", run_dir / "final.meps")
    assert code == 0 and "trained 1 iterations" in out

    code, out, _ = run(capsys, "eval", "--checkpoint", run_dir / "final.meps", "--data", mini_shdd,
                       "--out", tmp_path / "eval.json")
    assert code == 0 and out.startswith("test: n=4")
    assert json.loads((tmp_path / "eval.json").read_text())["n"] == 4

    restored = tmp_path / "restored"
    code, out, _ = run(capsys, "restore", "--checkpoint", run_dir / "final.meps", "--input", mini_shdd / "test",
                       "--out", restored)
    assert code == 0 and len(list(restored.glob("*.png"))) == 4

    img = sorted((mini_shdd / "test").glob("*.png"))[0]
    code, out, _ = run(capsys, "inspect", "features", "--checkpoint", run_dir / "final.meps", "--image", img,
                       "--out", tmp_path / "feat")
    assert code == 0 and len(list((tmp_path / "feat").glob("expert*.png"))) == 2


def test_identity_eval_baseline_equals_restored(capsys, mini_shdd, tmp_path):
    code, _, _ = run(capsys, "eval", "--identity", "--data", mini_shdd, "--out", tmp_path / "e.json")
    report = json.loads((tmp_path / "e.json").read_text())
    assert code == 0 and report["mean_psnr"] == report["baseline_psnr"]


def test_features_requires_arguments():
    with pytest.raises(SystemExit) as exc:
        main(["inspect", "features"])
    assert exc.value.code == 2


def _ratios(out):
    rows = [line.split() for line in out.splitlines()[1:]]
    return {" ".join(r[:-5]): float(r[-1]) for r in rows}


def test_param_count_full_scale(capsys):
    code, out, _ = run(capsys, "inspect", "param-count", "--config", CONFIGS / "paper.json")
    ratios = _ratios(out)
    assert code == 0 and ratios["N=3"] <= 1.20 and ratios["N=1 no-sharing"] >= 1.5


def test_param_count_desk(capsys):
    code, out, _ = run(capsys, "inspect", "param-count", "--config", CONFIGS / "desk.json")
    assert code == 0 and set(_ratios(out)) == {"N=1", "N=3", "N=1 no-sharing"}


def test_spectrum_and_grad_check(capsys):
    code, out, _ = run(capsys, "inspect", "spectrum", "--size", 128)
    assert code == 0 and out.startswith("PASS")
    code, out, _ = run(capsys, "inspect", "grad-check", "--size", 6)
    assert code == 0 and out.splitlines()[-1].startswith("PASS")


def test_echoed_config_reproduces_run(capsys, mini_shdd, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "train", "--config", CONFIGS / "tiny.json", "--data", mini_shdd, "--out", a,
               "--set", "train.iters=2", "--set", "model.n_templates=3", "--seed", 5)[0] == 0
    assert run(capsys, "train", "--config", a / "config.json", "--data", mini_shdd, "--out", b)[0] == 0
    assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()
    assert (a / "final.meps").read_bytes() == (b / "final.meps").read_bytes()
    assert (a / "train.log").read_bytes() == (b / "train.log").read_bytes()


def test_threaded_eval_flag(capsys, mini_shdd):
    code, out, _ = run(capsys, "eval", "--identity", "--data", mini_shdd, "--split", "train", "--threads", 3)
    assert code == 0 and out.startswith("train: n=96")
