"""
CTC on a grid small enough to enumerate
=======================================

Three frames, two words plus blank. We compute the loss with the
forward-backward recursions, check it against the sum over every frame path,
and look at the gradient and the best alignment.
"""

import numpy as np

from nsr import ctc

np.set_printoptions(precision=4, suppress=True)

# posteriors y[t, k]; column 0 is blank
grid = np.array([[0.6, 0.3, 0.1],
                 [0.2, 0.5, 0.3],
                 [0.5, 0.1, 0.4]])
labels = [1, 2]

lat = ctc.build_ctc_lattice(labels)
res = ctc.ctc_loss_grad(grid, lat)
print("loss from alpha/beta :", res.loss)
print("loss by enumeration  :", ctc.brute_force_loss(grid, labels))

# every row of the gradient sums to zero: it is y minus a distribution
print("gradient w.r.t. softmax inputs\n", res.grad)
print("row sums", res.grad.sum(axis=1))

# the single most likely path that still spells the labels
ali = ctc.forced_align(grid, lat)
print("forced alignment", ali.frame_labels, "log p =", round(ali.log_prob, 4))

# greedy decoding ignores the labels entirely
print("greedy decode", ctc.best_path_decode(grid))
