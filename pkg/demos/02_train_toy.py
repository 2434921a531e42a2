"""
Word recognition with no decoder
================================

A small bidirectional LSTM learns six words from synthetic feature patterns.
Recognition is nothing more than taking the argmax per frame and collapsing
repeats and blanks.
"""

import numpy as np

from nsr import ctc
from nsr.network import forward
from nsr.scoring import wer
from nsr.synth import ToyTask
from nsr.trainer import TrainConfig, init_stack, train

words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"]
task = ToyTask(words=words, seed=0)

train_set = [(x.frames, [words.index(w) + 1 for w in ws]) for x, ws in task.dataset(300, 1, 2, 5)]
test_set = task.dataset(30, 2, 2, 5)
print("first training utterance:", train_set[0][0].shape, "frames x dims,", train_set[0][1])

stack = init_stack(task.dim, 32, 1, len(words) + 1, seed=0)


def show(step, loss):
    if step % 100 == 0:
        print("step %d  loss %.3f" % (step, loss))


cfg = TrainConfig(learning_rate=0.3, batch_size=16, max_steps=400)
ckpt = train(cfg, train_set, stack, progress=show)

refs, hyps = {}, {}
for i, (x, ws) in enumerate(test_set):
    probs, _ = forward(ckpt.stack, x.frames)
    refs[str(i)] = ws
    hyps[str(i)] = [words[k - 1] for k in ctc.best_path_decode(probs)]
print("ref:", " ".join(refs["0"]))
print("hyp:", " ".join(hyps["0"]))
print("greedy WER %.1f%%" % (100 * wer(refs, hyps).wer))

# the output is spiky: most frames are blank, each word fires on a frame or two
probs, _ = forward(ckpt.stack, test_set[0][0].frames)
print("blank frames: %.0f%%" % (100 * np.mean(probs.argmax(axis=1) == 0)))
