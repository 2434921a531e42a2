"""Per-frame sausage lattices and their rescoring with V and G.

A sausage lattice has ``T + 1`` states in a chain. Frame ``t`` contributes the
top-k labels by posterior (blank included in the ranking) plus the blank arc,
each weighted ``-ln y``. The collapse transducer R turns frame-level symbols
into words, so that the rescoring chains

    spoken model:   lattice o R o invert(V) o scale(G)
    written model:  lattice o R o scale(G)

operate on word sequences.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import ctc
from .errors import ConfigError, EmptyMachine, NoPath
from .language import BLANK_SYMBOL
from .wfst import EPSILON, Wfst, compose, connect, invert, scale_weights, shortest_path

log = logging.getLogger(__name__)

DEFAULT_K = 10


def frame_symbols(vocab, symbols):
    """Map acoustic ids (0 = blank) to symbol-table ids."""
    return np.array([symbols.add(BLANK_SYMBOL)] + [symbols.add(w) for w in vocab], dtype=np.int64)


def build_sausage(grid, k, vocab, symbols, log_probs=None):
    if k < 1:
        raise ConfigError("k must be >= 1")
    grid = np.asarray(grid, dtype=np.float64)
    if log_probs is None:
        with np.errstate(divide="ignore"):
            log_probs = np.log(grid)
    sym = frame_symbols(vocab, symbols)
    fst = Wfst()
    states = fst.add_states(grid.shape[0] + 1)
    for t in range(grid.shape[0]):
        # stable sort so that equal posteriors keep the lower id first
        order = np.argsort(-grid[t], kind="stable")[:k]
        labels = list(order) + ([0] if 0 not in order else [])
        for lab in sorted(labels):
            w = -float(log_probs[t, lab])
            fst.add_arc(states[t], sym[lab], sym[lab], max(w, 0.0), states[t + 1])
    fst.set_final(states[-1], 0.0)
    return fst


def build_collapse_fst(vocab, symbols):
    """Transducer R: frame symbols to words (repeats merged, blanks deleted).

    State 0 means "last frame was blank or nothing yet"; state ``i`` means the
    last frame emitted word ``i``.
    """
    sym = frame_symbols(vocab, symbols)
    V = len(sym) - 1
    fst = Wfst()
    fst.add_states(V + 1)
    for q in range(V + 1):
        fst.set_final(q, 0.0)
        fst.add_arc(q, sym[0], EPSILON, 0.0, 0)
        for w in range(1, V + 1):
            if w == q:
                fst.add_arc(q, sym[w], EPSILON, 0.0, q)
            else:
                fst.add_arc(q, sym[w], sym[w], 0.0, w)
    return fst


@dataclass
class Hypothesis:
    words: list
    acoustic_cost: float
    lm_cost: float
    fallback: bool = False

    def to_json(self, utterance_id):
        return json.dumps({"utterance_id": utterance_id, "words": self.words,
                           "acoustic_cost": self.acoustic_cost, "lm_cost": self.lm_cost},
                          sort_keys=True)


def _acoustic_cost(lat, ilabels):
    """Cost of a frame-symbol path through the chain lattice (labels are unique per frame)."""
    s, total = lat.start, 0.0
    for lab in ilabels:
        arc = next(a for a in lat.arcs[s] if a.ilabel == lab)
        total += arc.weight
        s = arc.nextstate
    return total


def _greedy(grid, vocab, log_probs):
    ids = ctc.best_path_decode(grid)
    path = np.argmax(grid, axis=1)
    cost = -float(log_probs[np.arange(len(path)), path].sum())
    return vocab.decode(ids), cost


def _rescore(lat, chain, grid, vocab, symbols, log_probs):
    machine = lat
    for other in chain:
        machine = connect(compose(machine, other, connect_result=False))
    try:
        best = shortest_path(machine)
    except EmptyMachine:
        words, cost = _greedy(grid, vocab, log_probs)
        log.warning("rescoring found no path; falling back to greedy decode")
        return Hypothesis(words, cost, 0.0, fallback=True)
    acoustic = _acoustic_cost(lat, best.ilabels)
    return Hypothesis(symbols.decode(best.olabels), acoustic, best.weight - acoustic)


def _lattice_inputs(grid, log_probs):
    grid = np.asarray(grid, dtype=np.float64)
    if log_probs is None:
        with np.errstate(divide="ignore"):
            log_probs = np.log(grid)
    return grid, log_probs


def rescore_spoken(grid, vocab, symbols, R, V, G, lm_scale=1.0, k=DEFAULT_K, log_probs=None,
                   strict=False):
    """Written-domain words for a spoken-vocabulary posterior grid.

    ``V`` maps written to spoken, ``G`` scores written word sequences. With
    ``strict=True`` an empty composition raises :class:`NoPath` instead of
    falling back to the greedy spoken decode.
    """
    grid, log_probs = _lattice_inputs(grid, log_probs)
    lat = build_sausage(grid, k, vocab, symbols, log_probs)
    hyp = _rescore(lat, [R, invert(V), scale_weights(G, lm_scale)], grid, vocab, symbols, log_probs)
    if hyp.fallback and strict:
        raise NoPath("no lattice path survives composition with V and G")
    return hyp


def rescore_written(grid, vocab, symbols, R, G, lm_scale=1.0, k=DEFAULT_K, log_probs=None,
                    strict=False):
    grid, log_probs = _lattice_inputs(grid, log_probs)
    lat = build_sausage(grid, k, vocab, symbols, log_probs)
    hyp = _rescore(lat, [R, scale_weights(G, lm_scale)], grid, vocab, symbols, log_probs)
    if hyp.fallback and strict:
        raise NoPath("no lattice path survives composition with G")
    return hyp


def rescore_lattice(lat, chain, symbols):
    """Shortest path of ``lat`` composed left to right with every machine in ``chain``.

    Returns ``(words, frame_symbol_path, cost)``; raises :class:`NoPath`.
    """
    machine = lat
    for other in chain:
        machine = connect(compose(machine, other, connect_result=False))
    try:
        best = shortest_path(machine)
    except EmptyMachine as exc:
        raise NoPath(str(exc))
    return symbols.decode(best.olabels), best.ilabels, best.weight
