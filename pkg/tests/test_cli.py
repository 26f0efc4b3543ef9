import io
import re
import subprocess
import sys

import pytest

from embedall.cli import TRAIN_FLAGS, run

# documented contract of `train`
CONTRACT_DEFAULTS = {
    "dim": 10, "lr": 0.05, "epoch": 5, "negSearchLimit": 10, "margin": 0.05, "similarity": "cosine",
    "loss": "margin", "trainMode": "classification", "ngrams": 1, "bucket": 2000000, "minCount": 1,
    "maxNorm": 10, "dropoutRHS": 0, "thread": 1, "seed": 0, "fileFormat": "labeled_text", "timeBudget": 0,
}


def _help_defaults(text):
    """flag -> default string, read from the options section of --help."""
    options = " ".join(text.split("options:", 1)[1].split())
    parts = re.split(r"(?:^|\s)-(\w+) [A-Z_]+(?=\s)", options)
    out = {}
    for name, desc in zip(parts[1::2], parts[2::2]):
        m = re.search(r"\(default: ([^)]+)\)", desc)
        if m:
            out[name] = m.group(1)
    return out


def _same(a, b):
    try:
        return float(a) == float(b)
    except ValueError:
        return str(a) == str(b)


def test_help_matches_contract(capsys):
    assert run(["train", "--help"]) == 0
    shown = _help_defaults(capsys.readouterr().out)
    for flag, value in CONTRACT_DEFAULTS.items():
        assert flag in shown, flag
        assert _same(shown[flag], value), (flag, shown[flag], value)
    # every flag has a documented default, and help agrees with the table
    assert set(shown) == set(TRAIN_FLAGS)
    for flag, (default, _, _) in TRAIN_FLAGS.items():
        assert _same(shown[flag], default)


def test_train_test_overfits_fixture(fixture_file, tmp_path, capsys):
    model = tmp_path / "m.bin"
    assert run(["train", "-input", str(fixture_file), "-model", str(model), "-verbose", "0"]) == 0
    assert run(["test", "-input", str(fixture_file), "-model", str(model)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy\t1.0000")


def test_predict_unknown_query(fixture_file, tmp_path, capsys, monkeypatch):
    model = tmp_path / "m.bin"
    run(["train", "-input", str(fixture_file), "-model", str(model), "-verbose", "0"])
    capsys.readouterr()
    monkeypatch.setattr(sys, "stdin", io.StringIO("qwerty asdf\nthe striker scored\n"))
    assert run(["predict", "-model", str(model), "-topK", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "N/A"
    assert len(lines[1].split()) == 2 and all(t.startswith("__label__") for t in lines[1].split())


def test_identical_runs_write_identical_files(fixture_file, tmp_path):
    paths = [tmp_path / "a.bin", tmp_path / "b.bin"]
    for p in paths:
        assert run(["train", "-input", str(fixture_file), "-model", str(p), "-seed", "9", "-verbose", "0"]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_usage_errors(fixture_file, tmp_path, capsys):
    assert run(["train", "-input", str(fixture_file)]) == 1
    assert "required" in capsys.readouterr().err
    assert run(["train", "-input", str(fixture_file), "-model", "x", "-bogus", "1"]) == 1
    assert run(["train", "-input", str(fixture_file), "-model", "x", "-dim", "0"]) == 1
    assert run(["train", "-input", str(fixture_file), "-model", "x", "-fileFormat", "csv"]) == 1
    assert run(["train", "-input", str(fixture_file), "-model", "x", "-trainMode", "nope"]) == 1
    assert run(["frobnicate"]) == 1
    assert run([]) == 1


def test_data_errors(tmp_path, capsys):
    assert run(["train", "-input", str(tmp_path / "missing.txt"), "-model", str(tmp_path / "m")]) == 2
    bad = tmp_path / "kg.txt"
    bad.write_text("a r b\nonly two\n")
    assert run(["train", "-input", str(bad), "-model", str(tmp_path / "m"), "-fileFormat", "triple",
                "-trainMode", "knowledge_graph"]) == 2
    assert "line 2" in capsys.readouterr().err
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"hello")
    assert run(["dump", "-model", str(junk)]) == 2


def test_kg_pipeline(tmp_path, capsys):
    train_p, test_p = tmp_path / "train.txt", tmp_path / "test.txt"
    train_p.write_text("".join(f"e{i} next e{(i + 1) % 30}\n" for i in range(30)))
    test_p.write_text("e3 next e4\ne7 next e8\n")
    model = tmp_path / "kg.bin"
    assert run(["train", "-input", str(train_p), "-model", str(model), "-fileFormat", "triple",
                "-trainMode", "knowledge_graph", "-epoch", "20", "-verbose", "0"]) == 0
    assert run(["test-kg", "-input", str(test_p), "-model", str(model), "-known", str(train_p)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    fields = out[-1].split("\t")
    assert len(fields) == 5 and fields[-1] == "4"
    assert run(["test-kg", "-input", str(test_p), "-model", str(model), "-protocol", "raw"]) == 0
    assert run(["test-kg", "-input", str(test_p), "-model", str(model), "-protocol", "half"]) == 1


def test_ranking_test_and_nn_and_dump(tmp_path, capsys):
    data = tmp_path / "docs.txt"
    data.write_text("".join(f"a{i % 3} b{i % 3}\tc{i % 3} d{i % 3}\te{i % 3}\n" for i in range(12)))
    model = tmp_path / "s.bin"
    assert run(["train", "-input", str(data), "-model", str(model), "-fileFormat", "tabbed_entities",
                "-trainMode", "sentence_embedding", "-verbose", "0"]) == 0
    assert run(["test", "-input", str(data), "-model", str(model), "-testNegatives", "5"]) == 0
    assert "hits@10" in capsys.readouterr().out
    assert run(["nn", "-model", str(model), "-query", "a0", "-topK", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and lines[0].startswith("a0\t")
    out_file = tmp_path / "vec.tsv"
    assert run(["dump", "-model", str(model), "-output", str(out_file)]) == 0
    rows = out_file.read_text().splitlines()
    assert len(rows) == 15 and all(len(r.split("\t")) == 11 for r in rows)


def test_module_entry_point(fixture_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "embedall", "train", "-input", str(fixture_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
