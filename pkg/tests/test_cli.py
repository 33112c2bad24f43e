import json

import pytest

from emojimm.cli import RunConfig, build_report, main
from emojimm.corpus import LabelVocabulary, load_posts
from emojimm.vision import read_pgm

QUICK = ["--set", "dim=16", "--set", "epochs=6", "--set", "lambdas=0,0.01"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "raw.jsonl", "--n", 1000, "--k", 5, "--noise-rate", 0.1, "--raw") == 0
    assert run("prepare", root / "raw.jsonl", "--out", root / "data", "--k", 5, "--seed", 0) == 0
    for mode in ("visual", "textual", "multimodal"):
        assert run("train", "--data", root / "data", "--out", root / mode, "--mode", mode, *QUICK) == 0
        assert run("eval", "--model", root / mode, "--data", root / "data", "--out", root / f"eval-{mode}") == 0
    return root


class TestPrepare:
    def test_split_sizes(self, work):
        sizes = [len(load_posts(work / "data" / f"{s}.jsonl")) for s in ("train", "dev", "test")]
        assert sizes == [800, 100, 100]

    def test_labels_in_vocab(self, work):
        vocab = LabelVocabulary.load(work / "data" / "vocab.tsv")
        assert vocab.k == 5
        assert all(p.label in vocab for s in ("train", "dev", "test") for p in load_posts(work / "data" / f"{s}.jsonl"))

    def test_rerun_byte_identical(self, work, tmp_path):
        assert run("prepare", work / "raw.jsonl", "--out", tmp_path, "--k", 5, "--seed", 0) == 0
        for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "vocab.tsv", "config.txt"):
            assert (tmp_path / name).read_bytes() == (work / "data" / name).read_bytes()

    def test_prints_frequency_table(self, work, tmp_path, capsys):
        run("prepare", work / "raw.jsonl", "--out", tmp_path, "--k", 5)
        out = capsys.readouterr().out
        assert "train/dev/test 800/100/100" in out and "% test" in out

    def test_nothing_survives(self, tmp_path):
        (tmp_path / "raw.jsonl").write_text('{"id": "a", "text": "no emoji here at all"}\n')
        assert run("prepare", tmp_path / "raw.jsonl", "--out", tmp_path / "o") == 1


class TestTrainEval:
    def test_model_files(self, work):
        names = {p.name for p in (work / "multimodal").iterdir()}
        assert {"pipeline.json", "fusion.npz", "text_model.npz", "vision_head.npz", "config.txt", "dev_metrics.json"} <= names
        assert not any(n.startswith(".tmp") for n in (p.name for p in work.iterdir()))

    def test_eval_outputs(self, work):
        metrics = json.loads((work / "eval-multimodal" / "metrics.json").read_text())
        assert metrics["n"] == 100 and set(metrics["baselines"]) == {"majority", "weighted_random"}
        assert (work / "eval-multimodal" / "confusion.csv").read_text().startswith("gold\\pred,")
        assert read_pgm(work / "eval-multimodal" / "confusion.pgm").shape == (5 * 16, 5 * 16)

    def test_eval_deterministic(self, work, tmp_path):
        run("eval", "--model", work / "multimodal", "--data", work / "data", "--out", tmp_path)
        assert (tmp_path / "metrics.json").read_bytes() == (work / "eval-multimodal" / "metrics.json").read_bytes()

    def test_train_deterministic(self, work, tmp_path):
        run("train", "--data", work / "data", "--out", tmp_path / "m", "--mode", "textual", *QUICK)
        for name in ("fusion.npz", "text_model.npz", "pipeline.json"):
            assert (tmp_path / "m" / name).read_bytes() == (work / "textual" / name).read_bytes()

    def test_config_echoed(self, work):
        text = (work / "multimodal" / "config.txt").read_text()
        assert "dim=16\n" in text and "mode=multimodal\n" in text and "lambdas=0,0.01\n" in text
        keys = {line.split("=", 1)[0] for line in text.splitlines()}
        assert keys == set(RunConfig.__dataclass_fields__)

    def test_config_file_and_flag_precedence(self, work, tmp_path):
        (tmp_path / "run.cfg").write_text("# quick\nmode=visual\nlambdas=0\n")
        assert run("train", "--data", work / "data", "--out", tmp_path / "m", "-c", tmp_path / "run.cfg", "--mode", "textual", *QUICK[:4]) == 0
        text = (tmp_path / "m" / "config.txt").read_text()
        assert "mode=textual\n" in text and "lambdas=0\n" in text

    def test_unknown_key(self, work, tmp_path, capsys):
        assert run("train", "--data", work / "data", "--out", tmp_path / "m", "--set", "colour=red") == 2
        assert "colour" in capsys.readouterr().err
        assert not (tmp_path / "m").exists()

    def test_missing_data(self, tmp_path):
        assert run("train", "--data", tmp_path / "nowhere", "--out", tmp_path / "m") == 2

    def test_missing_config_file(self, work, tmp_path):
        assert run("train", "--data", work / "data", "--out", tmp_path / "m", "-c", tmp_path / "no.cfg") == 2


class TestPredict:
    def test_top4_descending(self, work, capsys):
        vec = ",".join(["0.5"] * 8)
        assert run("predict", "--model", work / "multimodal", "--text", "lol so dead today", "--visual-vec", vec, "-m", 4) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        probs = [float(line.split("\t")[2]) for line in lines]
        assert len(lines) == 4 and probs == sorted(probs, reverse=True)

    def test_textual_needs_no_image(self, work, capsys):
        assert run("predict", "--model", work / "textual", "--text", "love you babe") == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 4

    def test_missing_visual_input(self, work, capsys):
        assert run("predict", "--model", work / "visual", "--text", "x") == 1


def test_saliency(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "raw.jsonl", "--n", 300, "--k", 5, "--image-size", 16, "--image-dir", tmp_path / "img", "--raw") == 0
    assert run("prepare", tmp_path / "raw.jsonl", "--out", tmp_path / "data", "--k", 5) == 0
    assert run("train", "--data", tmp_path / "data", "--out", tmp_path / "m", "--mode", "visual", "--set", "grid=4", "--set", "lambdas=0") == 0
    image = load_posts(tmp_path / "data" / "test.jsonl")[0].image_ref
    capsys.readouterr()
    assert run("saliency", "--model", tmp_path / "m", "--image", image, "--out", tmp_path / "cam", "--scale", 2) == 0
    pgms = sorted((tmp_path / "cam").glob("cam_*.pgm"))
    assert len(pgms) == 4 and [p.name.split("_")[1] for p in pgms] == ["1", "2", "3", "4"]
    assert all(read_pgm(p).shape == (8, 8) for p in pgms)
    assert run("saliency", "--model", tmp_path / "m", "--image", image, "--out", tmp_path / "one", "--classes", "😂") == 0
    assert len(list((tmp_path / "one").glob("cam_*.pgm"))) == 1


class TestReport:
    def test_improvement_row(self, work, tmp_path, capsys):
        runs = [work / f"eval-{m}" for m in ("visual", "textual", "multimodal")]
        assert run("report", *runs, "--out", tmp_path / "table.json") == 0
        table = json.loads((tmp_path / "table.json").read_text())["top-5"]
        assert list(table) == ["Maj", "W.R.", "Vis", "Tex", "Mul", "%"]
        assert table["%"]["f1"] == round(100 * (table["Mul"]["f1"] - table["Tex"]["f1"]) / table["Tex"]["f1"], 1)
        assert "%\t" in capsys.readouterr().out

    def test_published_row(self):
        runs = [
            {"k": 5, "mode": "textual", "macro": {"precision": 54.9, "recall": 38.3, "f1": 31.3}},
            {"k": 5, "mode": "multimodal", "macro": {"precision": 56.7, "recall": 41.1, "f1": 35.5}},
        ]
        assert build_report(runs)["top-5"]["%"] == {"precision": 3.3, "recall": 7.3, "f1": 13.4}
