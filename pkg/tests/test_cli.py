import csv

import numpy as np
import pytest

from sigr.cli import main
from sigr.imaging import load_image, save_image

SMALL = ["--set", "codebook_k=16"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "c"), "--identities", "2", "--docs", "4", "--seed", "4"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus):
    art = corpus / "art"
    args = ["train", "--manifest", str(corpus / "c" / "manifest.csv"), "--out", str(art),
            "--train-fraction", "0.5", *SMALL]
    assert main(args) == 0
    return art


def test_synth_layout(corpus):
    c = corpus / "c"
    assert len(list((c / "docs").glob("*.pgm"))) == 8
    assert (c / "queries" / "id000.pgm").exists() and (c / "manifest_regions.csv").exists()


def test_train_writes_artifacts(trained):
    names = sorted(p.name for p in trained.iterdir())
    assert names == ["classes.txt", "codebook.sbvw", "run.cfg", "split.csv", "svm.ssvm"]
    assert (trained / "classes.txt").read_text() == "other\n*signature\n"
    assert "codebook_k=16" in (trained / "run.cfg").read_text()
    rows = list(csv.DictReader(open(trained / "split.csv")))
    assert sorted(r["split"] for r in rows) == ["test"] * 4 + ["train"] * 4


def test_training_is_deterministic(corpus, trained, tmp_path):
    args = ["train", "--manifest", str(corpus / "c" / "manifest.csv"), "--out", str(tmp_path),
            "--train-fraction", "0.5", *SMALL]
    assert main(args) == 0
    for name in ("codebook.sbvw", "svm.ssvm", "split.csv", "run.cfg"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_detect(corpus, trained, tmp_path):
    doc = corpus / "c" / "docs" / "id000_doc00.pgm"
    out = tmp_path / "comps.csv"
    assert main(["detect", "--doc", str(doc), "--artifacts", str(trained), "--out", str(out),
                 "--overlay", str(tmp_path / "o.pgm")]) == 0
    rows = list(csv.DictReader(open(out)))
    assert any(r["label"] == "signature" for r in rows)
    assert load_image(tmp_path / "o.pgm").shape == load_image(doc).shape


def test_retrieve_and_evaluate(corpus, trained, tmp_path):
    c = corpus / "c"
    runs = tmp_path / "runs"
    assert main(["retrieve", "--query", str(c / "queries" / "id000.pgm"), "--query", str(c / "queries" / "id001.pgm"),
                 "--manifest", str(c / "manifest.csv"), "--artifacts", str(trained), "--measure", "euclidean",
                 "--out", str(runs), "--log-dir", str(tmp_path / "logs")]) == 0
    ranked = list(csv.DictReader(open(runs / "id000.csv")))
    assert len(ranked) == 8 and ranked[0]["doc_id"] == "id000_doc00"
    assert len(list((tmp_path / "logs" / "id001").glob("*.csv"))) == 8
    ev = tmp_path / "ev"
    assert main(["evaluate", str(runs / "id000.csv"), f"id001={runs / 'id001.csv'}",
                 "--manifest", str(c / "manifest.csv"), "--artifacts", str(trained),
                 "--split", "test", "--out", str(ev)]) == 0
    m = next(csv.DictReader(open(ev / "metrics.csv")))
    assert float(m["map"]) == 1.0 and m["queries"] == "2"
    assert float(m["accuracy"]) >= 0.9
    assert (ev / "pr_id000.csv").exists() and (ev / "confusion.csv").exists()


def test_noise_image(tmp_path):
    save_image(tmp_path / "a.pgm", np.full((20, 20), 0.5))
    assert main(["noise", "--image", str(tmp_path / "a.pgm"), "--variance", "0.01",
                 "--out", str(tmp_path / "b.pgm"), "--seed", "1"]) == 0
    assert not np.array_equal(load_image(tmp_path / "b.pgm"), load_image(tmp_path / "a.pgm"))


def test_noise_corpus(corpus, tmp_path):
    assert main(["noise", "--manifest", str(corpus / "c" / "manifest.csv"), "--variance", "0.005",
                 "--out", str(tmp_path)]) == 0
    assert len(list((tmp_path / "docs").glob("*.pgm"))) == 8 and (tmp_path / "manifest.csv").exists()


def test_three_class_model(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "c"), "--identities", "2", "--docs", "2", "--logos", "1"]) == 0
    assert main(["train", "--manifest", str(tmp_path / "c" / "manifest.csv"), "--out", str(tmp_path / "a"),
                 "--classes", "printed,signature,logo", *SMALL]) == 0
    assert (tmp_path / "a" / "classes.txt").read_text() == "printed\n*signature\nlogo\n"
    assert (tmp_path / "a" / "svm.ssvm").read_bytes().count(b"SSVM") == 3


def test_exit_codes(corpus, trained, tmp_path):
    assert main([]) == 2
    assert main(["train", "--bogus"]) == 2
    assert main(["train", "--manifest", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 3
    assert main(["synth", "--out", str(tmp_path / "x"), "--identities", "0"]) == 2
    assert main(["noise", "--image", "a", "--variance", "-1", "--out", "b"]) == 2
    assert main(["train", "--manifest", "m", "--out", "o", "--set", "nokey"]) == 2
    bad = tmp_path / "bad"
    bad.mkdir()
    for p in trained.iterdir():
        (bad / p.name).write_bytes(p.read_bytes())
    (bad / "svm.ssvm").write_bytes(b"JUNK" + bytes(40))
    doc = corpus / "c" / "docs" / "id000_doc00.pgm"
    assert main(["detect", "--doc", str(doc), "--artifacts", str(bad), "--out", str(tmp_path / "o.csv")]) == 4
    assert main(["evaluate", "--manifest", str(corpus / "c" / "manifest.csv"), "--out", str(tmp_path)]) == 2
