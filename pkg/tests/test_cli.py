import json
import subprocess
import sys

import numpy as np
import pytest

from nsr import __version__
from nsr.cli import main
from nsr.features import write_wav
from nsr.synth import tone_clip

WORDS = ["alpha", "bravo", "charlie"]


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """featurize -> build-vocab -> train -> recognize on a tiny tone corpus."""
    d = tmp_path_factory.mktemp("pipe")
    rng = np.random.default_rng(0)
    rows = []
    for i in range(12):
        words = [WORDS[k] for k in rng.integers(0, 3, size=int(rng.integers(1, 4)))]
        write_wav(d / ("u%02d.wav" % i), tone_clip(words, WORDS, seed=i))
        rows.append({"utterance_id": "u%02d" % i, "audio_path": "u%02d.wav" % i,
                     "transcript": " ".join(words)})
    write_jsonl(d / "audio.jsonl", rows)
    (d / "corpus.txt").write_text("".join(r["transcript"] + "\n" for r in rows))
    assert main(["featurize", "--manifest", str(d / "audio.jsonl"), "--out-dir", str(d / "feats"),
                 "--out", str(d / "feats.jsonl")]) == 0
    assert main(["build-vocab", "--corpus", str(d / "corpus.txt"), "--out", str(d / "vocab.tsv")]) == 0
    (d / "train.json").write_text(json.dumps({"hidden": 16, "depths": 1, "steps": 1000,
                                              "batch_size": 6, "learning_rate": 0.1}))
    train = ["train", "--config", str(d / "train.json"), "--manifest", str(d / "feats.jsonl"),
             "--vocab", str(d / "vocab.tsv"), "--metrics", str(d / "metrics.csv")]
    assert main(train + ["--checkpoint", str(d / "model.nsrc")]) == 0
    assert main(train + ["--checkpoint", str(d / "again.nsrc")]) == 0
    refs = [{"id": r["utterance_id"], "words": r["transcript"]} for r in rows]
    write_jsonl(d / "refs.jsonl", refs)
    return d


def model_flags(d, out):
    return ["--checkpoint", str(d / "model.nsrc"), "--manifest", str(d / "feats.jsonl"),
            "--vocab", str(d / "vocab.tsv"), "--out", str(d / out)]


def test_featurize_writes_feature_manifest(pipeline):
    rows = read_jsonl(pipeline / "feats.jsonl")
    assert len(rows) == 12 and all((pipeline / r["feature_path"]).exists() or
                                   (pipeline / "feats" / ("%s.feat" % r["utterance_id"])).exists()
                                   for r in rows)
    assert "audio_path" not in rows[0]


def test_training_is_reproducible(pipeline):
    assert (pipeline / "model.nsrc").read_bytes() == (pipeline / "again.nsrc").read_bytes()
    assert (pipeline / "metrics.csv").read_text().startswith("step,loss,wall_time\n")


def test_recognize_and_score(pipeline, capsys):
    assert main(["recognize"] + model_flags(pipeline, "h1.jsonl")) == 0
    assert main(["recognize", "--workers", "3"] + model_flags(pipeline, "h2.jsonl")) == 0
    assert (pipeline / "h1.jsonl").read_bytes() == (pipeline / "h2.jsonl").read_bytes()
    hyps = read_jsonl(pipeline / "h1.jsonl")
    assert [h["utterance_id"] for h in hyps] == sorted(h["utterance_id"] for h in hyps)
    assert set(hyps[0]) == {"utterance_id", "words", "acoustic_cost", "lm_cost"}
    capsys.readouterr()
    assert main(["score", "--refs", str(pipeline / "refs.jsonl"), "--hyps", str(pipeline / "h1.jsonl"),
                 "--out", str(pipeline / "report.json"), "--text", str(pipeline / "report.txt")]) == 0
    line = capsys.readouterr().out
    assert line.startswith("written WER ")
    report = json.loads((pipeline / "report.json").read_text())
    assert report["wer"] <= 0.2
    assert "REF:" in (pipeline / "report.txt").read_text()


def test_rescore_with_lm(pipeline):
    d = pipeline
    assert main(["train-lm", "--corpus", str(d / "corpus.txt"), "--vocab", str(d / "vocab.tsv"),
                 "--out", str(d / "lm.arpa"), "--fst-out", str(d / "G.fst"),
                 "--symbols", str(d / "syms.txt")]) == 0
    assert (d / "lm.arpa").read_text().startswith("\n\\data\\")
    assert main(["rescore"] + model_flags(d, "r.jsonl") + ["--symbols", str(d / "syms.txt"),
                                                           "--lm", str(d / "G.fst")]) == 0
    greedy = {h["utterance_id"]: h["words"] for h in read_jsonl(d / "h1.jsonl")} \
        if (d / "h1.jsonl").exists() else None
    rescored = read_jsonl(d / "r.jsonl")
    assert len(rescored) == 12
    if greedy:
        same = sum(greedy[h["utterance_id"]] == h["words"] for h in rescored)
        assert same >= 9


def test_spoken_scoring_not_worse_than_written(tmp_path, capsys):
    (tmp_path / "w.tsv").write_text("number\t3\n2\t2\nme\t1\ntoo\t1\n")
    (tmp_path / "s.tsv").write_text("number\t3\ntwo\t2\nme\t1\ntoo\t1\n")
    assert main(["build-verbalizer", "--written-vocab", str(tmp_path / "w.tsv"),
                 "--spoken-vocab", str(tmp_path / "s.tsv"), "--out", str(tmp_path / "V.fst"),
                 "--symbols", str(tmp_path / "syms.txt"), "--rules-out", str(tmp_path / "rules.tsv")]) == 0
    assert (tmp_path / "rules.tsv").read_text() == "2\ttwo\n"
    write_jsonl(tmp_path / "refs.jsonl", [{"id": "a", "words": "number 2"}, {"id": "b", "words": "me too"}])
    write_jsonl(tmp_path / "hyps.jsonl", [{"id": "a", "words": "number two"}, {"id": "b", "words": "me two"}])
    common = ["score", "--refs", str(tmp_path / "refs.jsonl"), "--hyps", str(tmp_path / "hyps.jsonl")]
    capsys.readouterr()
    assert main(common + ["--mode", "written"]) == 0
    assert main(common + ["--mode", "spoken", "--verbalizer", str(tmp_path / "V.fst"),
                          "--symbols", str(tmp_path / "syms.txt")]) == 0
    written, spoken = capsys.readouterr().out.splitlines()
    assert written == "written WER 50.00% (S=2 I=0 D=0 N=4)"
    assert spoken == "spoken WER 25.00% (S=1 I=0 D=0 N=4)"


def test_filter_captions(tmp_path):
    rows = [{"id": "u", "caption": "a b c x e",
             "hyp_words": [{"w": w, "t0": i, "t1": i + 1} for i, w in enumerate("a b c d e".split())]}]
    write_jsonl(tmp_path / "c.jsonl", rows)
    assert main(["filter-captions", "--captions", str(tmp_path / "c.jsonl"), "--out",
                 str(tmp_path / "i.jsonl"), "--stats", str(tmp_path / "s.csv")]) == 0
    assert read_jsonl(tmp_path / "i.jsonl")[0]["islands"][0]["words"] == ["a", "b", "c"]
    assert "retained_fraction,0.6" in (tmp_path / "s.csv").read_text()


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["score", "--refs", "x"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["score", "--bogus-flag"])
    assert exc.value.code == 2
    capsys.readouterr()
    assert main(["score", "--refs", str(tmp_path / "nope"), "--hyps", str(tmp_path / "nope")]) == 1
    assert "FileNotFoundError" in capsys.readouterr().err
    write_jsonl(tmp_path / "r.jsonl", [{"id": "a", "words": "x"}])
    write_jsonl(tmp_path / "h.jsonl", [{"id": "b", "words": "x"}])
    assert main(["score", "--refs", str(tmp_path / "r.jsonl"), "--hyps", str(tmp_path / "h.jsonl")]) == 1
    assert "MissingRef" in capsys.readouterr().err


def test_config_file(tmp_path, capsys):
    write_jsonl(tmp_path / "r.jsonl", [{"id": "a", "words": "x y"}])
    write_jsonl(tmp_path / "h.jsonl", [{"id": "a", "words": "x"}])
    (tmp_path / "cfg.json").write_text(json.dumps({"refs": str(tmp_path / "r.jsonl"),
                                                   "hyps": str(tmp_path / "nope.jsonl")}))
    capsys.readouterr()
    # the command line overrides the config file
    assert main(["score", "--config", str(tmp_path / "cfg.json"), "--hyps", str(tmp_path / "h.jsonl")]) == 0
    assert capsys.readouterr().out.startswith("written WER 50.00%")
    (tmp_path / "bad.json").write_text(json.dumps({"no_such_flag": 1}))
    assert main(["score", "--config", str(tmp_path / "bad.json")]) == 1
    assert "ConfigError" in capsys.readouterr().err


def test_version_and_entry_point():
    out = subprocess.run([sys.executable, "-m", "nsr.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip() == "nsr %s (checkpoint format NSRC v1, feature format FEAT v1, wfst text v1)" \
        % __version__
