import json
import sys
from pathlib import Path

import pytest
import torch

from nnuzoo.cli import MANIFEST, build_parser, run_command

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tools"))
from make_golden_help import GOLDEN, help_texts  # noqa: E402


def run(argv):
    lines = []
    code = run_command(argv, out=lines.append)
    return code, "\n".join(lines)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert run(["synth", "--count", "10", "--seed", "3", "--out", str(d)])[0] == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, synth_dir):
    d = tmp_path_factory.mktemp("run")
    argv = ["train", "U2NetS", "--data", str(synth_dir), "--preset", "SynthShapes", "--out", str(d),
            "--tiny", "--epochs", "2", "--batch-size", "4", "--quiet"]
    code, text = run(argv)
    assert code == 0, text
    return d


# ----------------------------------------------------------------------------- help text

@pytest.mark.parametrize("name", sorted(help_texts()))
def test_help_matches_golden(name):
    golden = GOLDEN / f"help_{name}.txt"
    assert golden.exists(), "run tools/make_golden_help.py"
    assert help_texts()[name] == golden.read_text()


def test_every_subcommand_has_golden():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert {f"help_{n}.txt" for n in sub.choices} <= {p.name for p in GOLDEN.glob("help_*.txt")}


def test_help_exits_zero():
    assert run_command(["train", "--help"], out=lambda s: None) == 0


# ----------------------------------------------------------------------------- simple commands

def test_list_names_every_arch_and_preset():
    from nnuzoo.models import ARCHITECTURES, DATASETS

    code, text = run(["list"])
    assert code == 0
    for name in [*ARCHITECTURES, *DATASETS]:
        assert name in text


def test_params_reports_reference_delta():
    code, text = run(["params", "SS2D2Net", "--preset", "AbdomenCT"])
    assert code == 0
    n = int(text.split(": ")[1].split()[0])
    assert abs(n / 1e6 - 39.2) / 39.2 <= 0.10
    assert "reference" in text and "delta" in text


@pytest.mark.parametrize("argv", [
    ["params", "NoSuchNet"],
    ["params", "U2Net", "--preset", "Nowhere"],
    ["train", "U2Net"],
    ["--threads", "0", "list"],
    ["compare", "--runs", "missing.csv", "other.csv"],
])
def test_invalid_input_exits_two(argv):
    assert run(argv)[0] == 2


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("NNUZOO_THREADS", "2")
    try:
        assert run(["list"])[0] == 0
        assert torch.get_num_threads() == 2
    finally:
        torch.set_num_threads(1)


def test_build_writes_loadable_checkpoint(tmp_path):
    from nnuzoo.models import load_checkpoint

    path = tmp_path / "m.ckpt"
    assert run(["build", "U2NetS", "--preset", "SynthShapes", "--tiny", "--out", str(path)])[0] == 0
    assert load_checkpoint(path).config.arch == "U2NetS"
    assert json.loads((tmp_path / MANIFEST).read_text())["command"] == "build"


# ----------------------------------------------------------------------------- train / eval / compare

def test_train_outputs(trained):
    for f in (MANIFEST, "history.csv", "best.ckpt", "dice_cases.csv", "result.json"):
        assert (trained / f).exists(), f
    m = json.loads((trained / MANIFEST).read_text())
    assert m["command"] == "train" and m["seed"] == 0 and "protocol" in m
    assert json.loads((trained / "result.json").read_text())["val_cases"] == 2


def test_eval_report(trained, synth_dir, tmp_path):
    code, text = run(["eval", "--ckpt", str(trained / "best.ckpt"), "--data", str(synth_dir),
                      "--report", str(tmp_path)])
    assert code == 0, text
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["cases"] == 10
    assert len((tmp_path / "dice_cases.csv").read_text().splitlines()) == 11


def test_eval_corrupt_checkpoint_exits_two(synth_dir, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert run(["eval", "--ckpt", str(bad), "--data", str(synth_dir), "--report", str(tmp_path / "r")])[0] == 2


def test_compare_identical_runs_is_undefined(trained, tmp_path):
    a = trained / "dice_cases.csv"
    b = tmp_path / "copy" / "dice_cases.csv"
    b.parent.mkdir()
    b.write_bytes(a.read_bytes())
    assert run(["compare", "--runs", str(a), str(b)])[0] == 3


def test_compare_writes_pvalues(tmp_path):
    paths = []
    for name, shift in (("a", 0.0), ("b", 0.05)):
        p = tmp_path / name / "dice_cases.csv"
        p.parent.mkdir()
        rows = [f"c{i},{0.5 + 0.01 * i + shift * (1 + 0.1 * i)}" for i in range(8)]
        p.write_text("case_id,dice\n" + "\n".join(rows) + "\n")
        paths.append(str(p))
    code, text = run(["compare", "--runs", *paths, "--out", str(tmp_path / "cmp")])
    assert code == 0, text
    csv_text = (tmp_path / "cmp" / "pvalues.csv").read_text()
    assert "0.0078125" in csv_text  # 2 / 2**8, all differences one-signed
    assert (tmp_path / "cmp" / MANIFEST).exists()


def test_compare_mismatched_ids(tmp_path):
    for name, ids in (("a", "xy"), ("b", "xz")):
        (tmp_path / name).mkdir()
        (tmp_path / name / "d.csv").write_text("case_id,dice\n" + "".join(f"{i},0.5\n" for i in ids))
    assert run(["compare", "--runs", str(tmp_path / "a/d.csv"), str(tmp_path / "b/d.csv")])[0] == 2


# ----------------------------------------------------------------------------- bench / rerun

def test_bench_manifests_share_protocol(tmp_path):
    code, text = run(["bench", "--archs", "U2NetS,SS2D2NetS", "--tiny", "--reps", "0", "--out", str(tmp_path)])
    assert code == 0, text
    protos = [json.loads((tmp_path / a / MANIFEST).read_text())["protocol"] for a in ("U2NetS", "SS2D2NetS")]
    assert protos[0] == protos[1]
    assert (tmp_path / MANIFEST).exists()


def test_rerun_reproduces_outputs(trained, tmp_path):
    code, text = run(["rerun", str(trained / MANIFEST), "--out", str(tmp_path)])
    assert code == 0, text
    for f in ("history.csv", "best.ckpt", "dice_cases.csv", "result.json"):
        assert (tmp_path / f).read_bytes() == (trained / f).read_bytes(), f


def test_rerun_bad_manifest(tmp_path):
    p = tmp_path / MANIFEST
    p.write_text("{")
    assert run(["rerun", str(p)])[0] == 2
