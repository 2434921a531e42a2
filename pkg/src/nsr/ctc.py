"""Connectionist temporal classification over word posteriors.

The label sequence ``l`` (word ids, blank is 0) is expanded into the usual
alignment lattice of ``2U + 1`` states: even states are blanks, odd state
``s`` carries ``l[(s - 1) // 2]``. The forward variable ``alpha(t, s)``
includes the emission at ``t``; the backward variable ``beta(t, s)`` excludes
it, so ``sum_s alpha(t, s) * beta(t, s) == p(l | x)`` for every frame and the
gradient with respect to the softmax inputs is simply ``y - occupancy``.
"""

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidLabel, NoAlignment, ShapeError, TooLarge

BLANK = 0
NEG_INF = -np.inf


def _logsumexp(arrays):
    stacked = np.stack(arrays)
    m = stacked.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(stacked - safe).sum(axis=0))


def collapse(path, blank=BLANK):
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for sym in path:
        sym = int(sym)
        if sym != prev and sym != blank:
            out.append(sym)
        prev = sym
    return out


def min_frames(labels):
    """Fewest frames that can emit ``labels``: one per label plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


@dataclass(frozen=True)
class CtcLattice:
    labels: tuple

    @property
    def num_states(self):
        return 2 * len(self.labels) + 1

    @property
    def state_labels(self):
        ext = np.zeros(self.num_states, dtype=np.int64)
        ext[1::2] = self.labels
        return ext

    @property
    def skip_into(self):
        """``skip_into[s]`` is True when the arc ``s - 2 -> s`` exists."""
        ext = self.state_labels
        skip = np.zeros(self.num_states, dtype=bool)
        skip[3::2] = ext[3::2] != ext[1:-2:2]
        return skip

    @property
    def initial_states(self):
        return (0,) if not self.labels else (0, 1)

    @property
    def final_states(self):
        n = self.num_states
        return (0,) if not self.labels else (n - 2, n - 1)

    def arcs(self):
        """All ``(src, dst)`` arcs: self-loops, advances and permitted skips."""
        out = [(s, s) for s in range(self.num_states)]
        out += [(s, s + 1) for s in range(self.num_states - 1)]
        skip = self.skip_into
        out += [(s - 2, s) for s in range(2, self.num_states) if skip[s]]
        return sorted(out)


def build_ctc_lattice(labels):
    labels = tuple(int(x) for x in labels)
    for x in labels:
        if x <= BLANK:
            raise InvalidLabel("label ids must be >= 1 (0 is blank), got %d" % x)
    return CtcLattice(labels)


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray  # dLoss / dLogits, T x (V + 1)
    occupancy: np.ndarray  # T x (2U + 1) state posteriors
    log_alpha: np.ndarray
    log_beta: np.ndarray

    @property
    def log_prob(self):
        return -self.loss


def _as_log_probs(grid, log_probs):
    if log_probs is not None:
        lp = np.asarray(log_probs, dtype=np.float64)
    else:
        with np.errstate(divide="ignore"):
            lp = np.log(np.asarray(grid, dtype=np.float64))
    if lp.ndim != 2:
        raise ShapeError("posterior grid must be T x (V + 1), got shape %s" % (lp.shape,))
    return lp


def _check_labels(lat, num_outputs):
    if lat.labels and max(lat.labels) >= num_outputs:
        raise InvalidLabel("label %d outside a grid with %d outputs" % (max(lat.labels), num_outputs))


def ctc_forward_backward(log_probs, lat):
    """Return ``(log_alpha, log_beta, log_p)`` as defined in the module docstring."""
    lp = np.asarray(log_probs, dtype=np.float64)
    T = lp.shape[0]
    S = lat.num_states
    ext = lat.state_labels
    skip = lat.skip_into
    emit = lp[:, ext]  # T x S

    alpha = np.full((T, S), NEG_INF)
    for s in lat.initial_states:
        alpha[0, s] = emit[0, s]
    pad = np.full(2, NEG_INF)
    for t in range(1, T):
        prev = np.concatenate([pad, alpha[t - 1]])
        stay = prev[2:]
        advance = prev[1:-1]
        jump = np.where(skip, prev[:-2], NEG_INF)
        alpha[t] = _logsumexp([stay, advance, jump]) + emit[t]

    beta = np.full((T, S), NEG_INF)
    for s in lat.final_states:
        beta[T - 1, s] = 0.0
    skip_from = np.zeros(S, dtype=bool)  # s -> s + 2 exists
    skip_from[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = np.concatenate([beta[t + 1] + emit[t + 1], pad])
        stay = nxt[:-2]
        advance = nxt[1:-1]
        jump = np.where(skip_from, nxt[2:], NEG_INF)
        beta[t] = _logsumexp([stay, advance, jump])

    log_p = _logsumexp([alpha[T - 1, s] for s in lat.final_states])
    return alpha, beta, float(log_p)


def ctc_loss_grad(grid, lat, log_probs=None):
    """CTC loss ``-ln p(l | x)`` and its gradient with respect to the logits.

    ``grid`` holds the softmax outputs; pass ``log_probs`` (the log-softmax of
    the logits) as well when available, it avoids a lossy ``log(exp(.))``
    round trip. Raises :class:`NoAlignment` if no path emits ``lat.labels``
    within ``T`` frames.
    """
    lp = _as_log_probs(grid, log_probs)
    T, num_outputs = lp.shape
    if T == 0:
        raise NoAlignment("empty posterior grid")
    _check_labels(lat, num_outputs)
    if min_frames(lat.labels) > T:
        raise NoAlignment("%d labels need at least %d frames, grid has %d"
                          % (len(lat.labels), min_frames(lat.labels), T))

    alpha, beta, log_p = ctc_forward_backward(lp, lat)
    if not np.isfinite(log_p):
        raise NoAlignment("every alignment has zero probability")

    occupancy = np.exp(alpha + beta - log_p)
    y = np.exp(lp)
    expected = np.zeros_like(y)
    ext = lat.state_labels
    for s in range(lat.num_states):
        expected[:, ext[s]] += occupancy[:, s]
    return CtcResult(-log_p, y - expected, occupancy, alpha, beta)


@lru_cache(maxsize=64)
def _all_paths(num_outputs, T):
    paths = np.array(list(itertools.product(range(num_outputs), repeat=T)), dtype=np.int64)
    groups = {}
    for i, p in enumerate(paths):
        groups.setdefault(tuple(collapse(p)), []).append(i)
    return paths.reshape(-1, T), {k: np.array(v) for k, v in groups.items()}


def brute_force_loss(grid, labels, limit=10**7):
    """CTC loss by enumerating every length-``T`` path and collapsing it.

    Only feasible for tiny grids; exists to check :func:`ctc_loss_grad`.
    """
    grid = np.asarray(grid, dtype=np.float64)
    T, num_outputs = grid.shape
    if num_outputs ** T > limit:
        raise TooLarge("%d^%d paths exceeds the enumeration limit" % (num_outputs, T))
    target = tuple(int(x) for x in labels)
    paths, groups = _all_paths(num_outputs, T)
    if target not in groups:
        raise NoAlignment("no length-%d path collapses to %s" % (T, list(target)))
    probs = grid[np.arange(T)[None, :], paths[groups[target]]].prod(axis=1)
    return float(-np.log(probs.sum()))


def best_path_decode(grid, blank=BLANK):
    """Greedy decode: frame argmax, merge repeats, drop blanks."""
    grid = np.asarray(grid)
    if grid.shape[0] == 0:
        return []
    return collapse(np.argmax(grid, axis=1), blank)


@dataclass
class Alignment:
    states: list
    frame_labels: list
    log_prob: float


def forced_align(grid, lat, log_probs=None, tol=1e-12):
    """Viterbi path through ``lat``.

    Among equally likely paths, the one that emits each label earliest (the
    lexicographically largest state sequence) wins.
    """
    lp = _as_log_probs(grid, log_probs)
    T, num_outputs = lp.shape
    _check_labels(lat, num_outputs)
    if T == 0 or min_frames(lat.labels) > T:
        raise NoAlignment("%d frames cannot emit %d labels" % (T, len(lat.labels)))
    S = lat.num_states
    ext = lat.state_labels
    emit = lp[:, ext]
    skip = lat.skip_into

    # best log score from (t, s) to the end, including the emission at t
    togo = np.full((T, S), NEG_INF)
    for s in lat.final_states:
        togo[T - 1, s] = emit[T - 1, s]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            cands = [togo[t + 1, s]]
            if s + 1 < S:
                cands.append(togo[t + 1, s + 1])
            if s + 2 < S and skip[s + 2]:
                cands.append(togo[t + 1, s + 2])
            togo[t, s] = emit[t, s] + max(cands)

    def pick(options, scores):
        best = max(scores)
        if not np.isfinite(best):
            return None, best
        chosen = max(o for o, sc in zip(options, scores) if sc >= best - tol * max(1.0, abs(best)))
        return chosen, best

    starts = list(lat.initial_states)
    s, score = pick(starts, [togo[0, s] for s in starts])
    if s is None:
        raise NoAlignment("every alignment has zero probability")
    states = [s]
    for t in range(1, T):
        opts = [s]
        if s + 1 < S:
            opts.append(s + 1)
        if s + 2 < S and skip[s + 2]:
            opts.append(s + 2)
        s, _ = pick(opts, [togo[t, o] for o in opts])
        states.append(s)
    log_prob = float(sum(emit[t, st] for t, st in enumerate(states)))
    return Alignment(states, [int(ext[st]) for st in states], log_prob)
