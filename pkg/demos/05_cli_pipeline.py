"""
The command-line pipeline
=========================

featurize -> build-vocab -> train -> recognize -> score, run through the
``nsr`` entry point on a few seconds of tone-coded audio in a temporary
directory. Equivalent shell commands are printed as they run.
"""

import json
import os
import shlex
import tempfile

import numpy as np

from nsr.cli import main
from nsr.features import write_wav
from nsr.synth import tone_clip

words = ["alpha", "bravo", "charlie"]
work = tempfile.mkdtemp(prefix="nsr-demo-")
rng = np.random.default_rng(0)


def run(*argv):
    print("$ nsr " + " ".join(shlex.quote(a) for a in argv))
    status = main(list(argv))
    assert status == 0


# audio and a manifest that points at it
rows = []
for i in range(12):
    ws = [words[k] for k in rng.integers(0, 3, size=int(rng.integers(1, 4)))]
    write_wav(os.path.join(work, "u%02d.wav" % i), tone_clip(ws, words, seed=i))
    rows.append({"utterance_id": "u%02d" % i, "audio_path": "u%02d.wav" % i, "transcript": " ".join(ws)})
with open(os.path.join(work, "audio.jsonl"), "w") as f:
    f.writelines(json.dumps(r) + "\n" for r in rows)
with open(os.path.join(work, "corpus.txt"), "w") as f:
    f.writelines(r["transcript"] + "\n" for r in rows)
with open(os.path.join(work, "refs.jsonl"), "w") as f:
    f.writelines(json.dumps({"id": r["utterance_id"], "words": r["transcript"]}) + "\n" for r in rows)

p = lambda name: os.path.join(work, name)
run("featurize", "--manifest", p("audio.jsonl"), "--out-dir", p("feats"), "--out", p("feats.jsonl"))
run("build-vocab", "--corpus", p("corpus.txt"), "--out", p("vocab.tsv"))
run("train", "--manifest", p("feats.jsonl"), "--vocab", p("vocab.tsv"), "--checkpoint", p("model.nsrc"),
    "--hidden", "16", "--depths", "1", "--steps", "1000", "--batch-size", "6", "--learning-rate", "0.1")
run("recognize", "--checkpoint", p("model.nsrc"), "--manifest", p("feats.jsonl"), "--vocab", p("vocab.tsv"),
    "--out", p("hyps.jsonl"))
run("score", "--refs", p("refs.jsonl"), "--hyps", p("hyps.jsonl"))
print("artifacts in", work)
