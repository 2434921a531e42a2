"""
Written and spoken words
========================

"104" is written once but read aloud as "one hundred four" or "one oh four".
A verbalizer transducer V maps between the two; here it expands references
for scoring, turns a written LM into a spoken one, and maps a spoken
recognition lattice back to written text.
"""

import numpy as np

from nsr.language import (SPOKEN, Vocabulary, build_verbalizer, fst_sentence_cost, lm_to_fst,
                          number_rules, train_ngram, verbalizations)
from nsr.lattice import build_collapse_fst, rescore_spoken
from nsr.scoring import spoken_lm, spoken_references, spoken_wer, wer
from nsr.wfst import SymbolTable, compose, linear_fst, shortest_path

written = Vocabulary(["room", "104", "2", "too", "me", "number"])
spoken = Vocabulary(["room", "one", "hundred", "oh", "four", "two", "too", "me", "number"], domain=SPOKEN)
symbols = SymbolTable()
rules = [r for r in number_rules(0, 200, ordinals=0) if r.written in ("104", "2")]
V = build_verbalizer(rules, written, spoken, symbols)

print("readings of 104:", verbalizations(["104"], V, symbols))

# scoring a spoken hypothesis against a written reference
refs = {"a": "room 104"}
hyps = {"a": "room one oh four"}
print("written-domain WER %.0f%%" % (100 * wer(refs, hyps).wer))
print("spoken-domain WER  %.0f%%" % (100 * spoken_wer(spoken_references(refs, V, symbols), hyps).wer))

# a written bigram becomes a spoken LM by composing with V
lm = train_ngram(["room 104", "number 2", "me too", "room 104"], 2, written)
G = lm_to_fst(lm, symbols)
S = spoken_lm(G, V)
cost = lambda fst, ws: shortest_path(compose(linear_fst(symbols.encode(ws)), fst)).weight
print("G cost of 'room 104'              %.3f" % fst_sentence_cost(G, ["room", "104"], symbols))
print("spoken LM cost 'room one oh four' %.3f" % cost(S, ["room", "one", "oh", "four"]))

# "two" and "too" sound identical; the LM decides which one was meant
s = spoken.id
grid = np.full((4, spoken.num_outputs), 0.02)
grid[0, s("number")] = 0.9
grid[1, 0] = 0.9
grid[2, s("too")], grid[2, s("two")] = 0.5, 0.45
grid[3, 0] = 0.9
grid /= grid.sum(axis=1, keepdims=True)
R = build_collapse_fst(spoken, symbols)
print("acoustics alone: number too")
print("rescored:", " ".join(rescore_spoken(grid, spoken, symbols, R, V, G, k=3).words))
