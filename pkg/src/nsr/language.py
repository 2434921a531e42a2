"""Vocabularies, the written-to-spoken verbalizer and backoff n-gram models.

Acoustic vocabularies reserve id 0 for the CTC blank; words get ids 1..V in
order of descending count (ties alphabetical). Language models predict words
plus ``</s>`` and ``<unk>`` and are conditioned on histories that may start
with ``<s>``.
"""

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from . import ctc
from .errors import ConfigError, EmptyCorpus, FormatError, InvalidLabel, NoAlignment, RuleError
from .wfst import EPSILON, SymbolTable, Wfst, compose, enumerate_paths, linear_fst, project

BLANK_SYMBOL = "<blank>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
WRITTEN = "written"
SPOKEN = "spoken"


class Vocabulary:
    def __init__(self, words, counts=None, domain=WRITTEN):
        if domain not in (WRITTEN, SPOKEN):
            raise ConfigError("domain must be 'written' or 'spoken', got %r" % domain)
        self.words = [BLANK_SYMBOL] + list(words)
        if len(set(self.words)) != len(self.words):
            raise ConfigError("duplicate words in vocabulary")
        self.index = {w: i for i, w in enumerate(self.words)}
        self.counts = dict(counts or {})
        self.domain = domain

    @property
    def size(self):
        """Number of words, excluding blank."""
        return len(self.words) - 1

    @property
    def num_outputs(self):
        return len(self.words)

    def __len__(self):
        return self.size

    def __contains__(self, word):
        return word in self.index and word != BLANK_SYMBOL

    def __iter__(self):
        return iter(self.words[1:])

    def id(self, word):
        return self.index[word]

    def word(self, idx):
        return self.words[idx]

    def encode(self, words):
        missing = [w for w in words if w not in self]
        if missing:
            raise InvalidLabel("words not in vocabulary: %s" % " ".join(missing[:5]))
        return [self.index[w] for w in words]

    def decode(self, ids):
        return [self.words[i] for i in ids if i != 0]

    def to_text(self):
        return "".join("%s\t%d\n" % (w, self.counts.get(w, 0)) for w in self.words[1:])

    @property
    def checksum(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def read(cls, path, domain=WRITTEN):
        words, counts = [], {}
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise FormatError("%s:%d: expected 'word<TAB>count'" % (path, n))
                words.append(parts[0])
                counts[parts[0]] = int(parts[1])
        return cls(words, counts, domain)


def build_vocab(corpus, threshold=0, domain=WRITTEN):
    """Keep words seen strictly more than ``threshold`` times.

    ``corpus`` is an iterable of token sequences (or whitespace-separated
    strings).
    """
    if threshold < 0:
        raise ConfigError("threshold must be >= 0")
    counts = Counter()
    n_sent = 0
    for sent in corpus:
        counts.update(sent.split() if isinstance(sent, str) else sent)
        n_sent += 1
    if not counts:
        raise EmptyCorpus("corpus has no tokens (%d sentences)" % n_sent)
    kept = sorted((w for w, c in counts.items() if c > threshold), key=lambda w: (-counts[w], w))
    return Vocabulary(kept, {w: counts[w] for w in kept}, domain)


def oov_rate(vocab, tokens):
    """Fraction of test tokens missing from ``vocab``.

    ``tokens`` may be a flat token list or a list of sentences.
    """
    flat = []
    for item in tokens:
        flat.extend(item.split() if isinstance(item, str) else item)
    if not flat:
        return 0.0
    return sum(1 for t in flat if t not in vocab) / len(flat)


# -- verbalizer ---------------------------------------------------------------

@dataclass(frozen=True)
class VerbalizerRule:
    written: str
    expansions: tuple  # tuple of word tuples

    def __post_init__(self):
        if not self.expansions:
            raise RuleError("rule for %r has no expansions" % self.written)


_ONES = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
         "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
         "seventeen", "eighteen", "nineteen"]
_TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]
_ORDINALS = {"one": "first", "two": "second", "three": "third", "five": "fifth",
             "eight": "eighth", "nine": "ninth", "twelve": "twelfth"}


def cardinal(n):
    if n < 20:
        return [_ONES[n]]
    if n < 100:
        return [_TENS[n // 10]] + ([_ONES[n % 10]] if n % 10 else [])
    if n < 1000:
        return [_ONES[n // 100], "hundred"] + (cardinal(n % 100) if n % 100 else [])
    if n < 10000:
        return [_ONES[n // 1000], "thousand"] + (cardinal(n % 1000) if n % 1000 else [])
    raise ValueError("cardinal() covers 0..9999, got %d" % n)


def digit_string(n):
    return ["oh" if c == "0" else _ONES[int(c)] for c in str(n)]


def year_style(n):
    hi, lo = divmod(n, 100)
    if lo == 0:
        return cardinal(hi) + ["hundred"]
    if lo < 10:
        return cardinal(hi) + ["oh", _ONES[lo]]
    return cardinal(hi) + cardinal(lo)


def ordinal(n):
    words = cardinal(n)
    last = words[-1]
    if last in _ORDINALS:
        last = _ORDINALS[last]
    elif last.endswith("y"):
        last = last[:-1] + "ieth"
    else:
        last = last + "th"
    return words[:-1] + [last]


def _ordinal_suffix(n):
    if 10 <= n % 100 <= 20:
        return "th"
    return {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")


def number_rules(lo=0, hi=9999, ordinals=31):
    """Verbalizations for the integers ``lo..hi`` plus ordinals ``1st..Nth``.

    Every integer gets its cardinal reading; multi-digit integers also get a
    digit-by-digit reading with "oh" for zero, and 1100..1999 / 2010..2099 a
    year-style reading ("nineteen eighty four").
    """
    rules = []
    for n in range(lo, hi + 1):
        exps = [tuple(cardinal(n))]
        if n == 0:
            exps.append(("oh",))
        if n >= 10:
            exps.append(tuple(digit_string(n)))
        if 1100 <= n <= 1999 or 2010 <= n <= 2099:
            exps.append(tuple(year_style(n)))
        rules.append(VerbalizerRule(str(n), tuple(dict.fromkeys(exps))))
    for n in range(1, ordinals + 1):
        rules.append(VerbalizerRule("%d%s" % (n, _ordinal_suffix(n)), (tuple(ordinal(n)),)))
    return rules


def write_rules(path, rules):
    with open(path, "w", encoding="utf-8") as f:
        for r in rules:
            for exp in r.expansions:
                f.write("%s\t%s\n" % (r.written, " ".join(exp)))


def read_rules(path):
    table = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].split():
                raise FormatError("%s:%d: expected 'written<TAB>spoken expansion'" % (path, n))
            table.setdefault(parts[0], []).append(tuple(parts[1].split()))
    return [VerbalizerRule(w, tuple(dict.fromkeys(e))) for w, e in table.items()]


def filter_rules(rules, spoken_words):
    """Keep only expansions made of ``spoken_words``; drop rules left empty."""
    spoken = set(spoken_words)
    out = []
    for r in rules:
        exps = tuple(e for e in r.expansions if all(w in spoken for w in e))
        if exps:
            out.append(VerbalizerRule(r.written, exps))
    return out


def build_verbalizer(rules, vocab_written, vocab_spoken, symbols):
    """Transducer V mapping written tokens to every allowed spoken expansion.

    Written words without a rule map to themselves. A k-word expansion is a
    chain ``written:w1, <eps>:w2, ..., <eps>:wk`` back to the single hub state.
    ``symbols`` (a :class:`SymbolTable`) is extended with any new words.
    """
    spoken = set(vocab_spoken)
    by_word = {}
    for r in rules:
        by_word.setdefault(r.written, []).extend(r.expansions)
    fst = Wfst()
    hub = fst.add_state()
    fst.set_final(hub, 0.0)
    for w in vocab_written:
        if w in (BLANK_SYMBOL, EPSILON):
            continue
        wid = symbols.add(w)
        exps = by_word.get(w)
        if not exps:
            fst.add_arc(hub, wid, wid, 0.0, hub)
            continue
        for exp in dict.fromkeys(exps):
            missing = [s for s in exp if s not in spoken]
            if missing:
                raise RuleError("expansion %r of %r uses words outside the spoken vocabulary: %s"
                                % (" ".join(exp), w, " ".join(missing)))
            ids = [symbols.add(s) for s in exp]
            prev = hub
            for k, sid in enumerate(ids):
                nxt = hub if k == len(ids) - 1 else fst.add_state()
                fst.add_arc(prev, wid if k == 0 else EPSILON, sid, 0.0, nxt)
                prev = nxt
    return fst


def verbalizations(written_words, V, symbols):
    """Spoken word sequences for a written sentence, via ``project(T o V, output)``."""
    try:
        ids = symbols.encode(written_words)
    except KeyError as exc:
        raise RuleError("word %s has no verbalizer entry" % exc)
    spoken = project(compose(linear_fst(ids), V), "output")
    paths = enumerate_paths(spoken)
    if not paths:
        raise RuleError("no verbalization for %r" % " ".join(written_words))
    return sorted(set(tuple(symbols.decode(p[1])) for p in paths))


def select_spoken_target(written_words, V, grid, spoken_vocab, symbols, log_probs=None):
    """Pick the verbalization whose forced alignment to ``grid`` is most likely.

    Ties go to the expansion with fewer words, then alphabetical order.
    Returns the acoustic label ids of the chosen spoken sequence.
    """
    candidates = [c for c in verbalizations(written_words, V, symbols) if all(w in spoken_vocab for w in c)]
    if not candidates:
        raise RuleError("no verbalization of %r is covered by the spoken vocabulary"
                        % " ".join(written_words))
    scored = []
    for words in candidates:
        labels = spoken_vocab.encode(words)
        try:
            ali = ctc.forced_align(grid, ctc.build_ctc_lattice(labels), log_probs=log_probs)
        except NoAlignment:
            continue
        scored.append((-ali.log_prob, len(words), words, labels))
    if not scored:
        raise NoAlignment("no verbalization of %r fits in %d frames"
                          % (" ".join(written_words), np.shape(grid if log_probs is None else log_probs)[0]))
    best = min(sc[0] for sc in scored)
    ties = [sc for sc in scored if sc[0] <= best + 1e-12 * max(1.0, abs(best))]
    return min(ties, key=lambda sc: (sc[1], sc[2]))[3]


# -- n-gram language model ----------------------------------------------------

class NGramLm:
    """Backoff n-gram model.

    ``probs[h][w]`` holds explicit conditional probabilities for history tuple
    ``h`` (``len(h) < order``); ``backoff[h]`` scales the lower-order
    distribution for words without an explicit entry. Histories missing from
    ``backoff`` back off with weight 1.
    """

    def __init__(self, order, words, probs, backoff):
        self.order = order
        self.words = list(words)  # predictable tokens, includes </s> and <unk>
        self.probs = probs
        self.backoff = backoff

    def _map(self, w):
        return w if w in self.probs[()] else UNK

    def prob(self, word, history=()):
        word = self._map(word)
        history = tuple(self._map(h) if h != BOS else h for h in history)[-(self.order - 1):] \
            if self.order > 1 else ()
        return self._prob(word, history)

    def _prob(self, word, history):
        scale = 1.0
        while True:
            table = self.probs.get(history)
            if table is not None and word in table:
                return scale * table[word]
            if not history:
                return 0.0
            scale *= self.backoff.get(history, 1.0)
            history = history[1:]

    def logprob(self, word, history=()):
        p = self.prob(word, history)
        return math.log(p) if p > 0 else -math.inf

    def sentence_logprob(self, words):
        """Natural-log probability of ``words`` followed by ``</s>``."""
        hist = [BOS]
        total = 0.0
        for w in list(words) + [EOS]:
            total += self.logprob(w, tuple(hist))
            hist.append(w)
        return total

    def histories(self):
        return list(self.probs)

    def total_mass(self, history):
        """Sum of ``p(w | history)`` over every predictable word."""
        return sum(self._prob(w, tuple(history)) for w in self.words)

    def num_ngrams(self):
        return sum(len(t) for t in self.probs.values())


def _tokens(sent):
    return sent.split() if isinstance(sent, str) else list(sent)


def _lm_words(vocab):
    words = [w for w in vocab if w not in (BLANK_SYMBOL, BOS, EOS, UNK)]
    return words + [UNK, EOS]


def train_ngram(corpus, order, vocab, discount=0.5):
    """Absolute discounting with Katz-style backoff.

    Every explicit n-gram loses ``discount`` from its count; the freed mass of
    a history goes to the unseen words in proportion to the lower-order model.
    Unigram mass freed this way is spread uniformly over the vocabulary.
    """
    if order < 1:
        raise ConfigError("order must be >= 1, got %r" % order)
    if not 0 < discount < 1:
        raise ConfigError("discount must lie in (0, 1)")
    words = _lm_words(vocab)
    known = set(words)
    counts = [defaultdict(Counter) for _ in range(order)]
    for sent in corpus:
        toks = [BOS] + [w if w in known else UNK for w in _tokens(sent)] + [EOS]
        for i in range(1, len(toks)):
            for k in range(order):
                if i - k < 0:
                    break
                counts[k][tuple(toks[i - k:i])][toks[i]] += 1
    if not counts[0]:
        raise EmptyCorpus("no sentences to estimate from")

    probs, backoff = {}, {}
    uni = counts[0][()]
    total = sum(uni.values())
    floor = discount * len(uni) / total / len(words)
    probs[()] = {w: max(uni.get(w, 0) - discount, 0.0) / total + floor for w in words}

    lm = NGramLm(order, words, probs, backoff)
    for k in range(1, order):
        for hist in sorted(counts[k]):
            cont = counts[k][hist]
            c_h = sum(cont.values())
            table = {w: (c - discount) / c_h for w, c in cont.items()}
            lower_seen = sum(lm._prob(w, hist[1:]) for w in table)
            free = discount * len(cont) / c_h
            denom = 1.0 - lower_seen
            if denom > 1e-12:
                backoff[hist] = free / denom
            else:
                scale = 1.0 / sum(table.values())
                table = {w: p * scale for w, p in table.items()}
                backoff[hist] = 0.0
            probs[hist] = table
    return lm


def _fmt_log10(p):
    return "%.17g" % (math.log10(p) if p > 0 else -99.0)


def write_arpa(path, lm):
    by_order = defaultdict(list)
    for hist, table in lm.probs.items():
        for w, p in table.items():
            by_order[len(hist) + 1].append((hist + (w,), p))
    if lm.order > 1:
        by_order[1].append(((BOS,), 0.0))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n\\data\\\n")
        for k in range(1, lm.order + 1):
            f.write("ngram %d=%d\n" % (k, len(by_order[k])))
        for k in range(1, lm.order + 1):
            f.write("\n\\%d-grams:\n" % k)
            for gram, p in sorted(by_order[k]):
                line = "%s\t%s" % (_fmt_log10(p), " ".join(gram))
                if k < lm.order and gram in lm.backoff:
                    line += "\t" + _fmt_log10(lm.backoff[gram])
                f.write(line + "\n")
        f.write("\n\\end\\\n")


def read_arpa(path):
    probs, backoff = defaultdict(dict), {}
    order = 0
    section = None
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("ngram "):
                if line.startswith("ngram "):
                    order = max(order, int(line.split()[1].split("=")[0]))
                continue
            if line == "\\data\\" or line == "\\end\\":
                section = None
                continue
            if line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:line.index("-")])
                continue
            if section is None:
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if "\t" in line:
                lp, gram = float(parts[0]), tuple(parts[1].split())
                bo = float(parts[2]) if len(parts) > 2 else None
            else:
                lp = float(parts[0])
                gram = tuple(parts[1:1 + section])
                bo = float(parts[1 + section]) if len(parts) > 1 + section else None
            if len(gram) != section:
                raise FormatError("%s: %d-gram line has %d words" % (path, section, len(gram)))
            if gram != (BOS,):
                probs[gram[:-1]][gram[-1]] = 0.0 if lp <= -99 else 10.0 ** lp
            if bo is not None:
                backoff[gram] = 0.0 if bo <= -99 else 10.0 ** bo
    if () not in probs:
        raise FormatError("%s: no unigrams" % path)
    return NGramLm(order, list(probs[()]), dict(probs), backoff)


def lm_to_fst(lm, symbols):
    """Backoff acceptor G with weights ``-ln p``.

    One state per history that has explicit continuations. Word arcs move to
    the longest suffix of ``history + word`` that is itself a state; an epsilon
    arc carries ``-ln backoff(h)`` to the next shorter history. ``</s>`` is
    realised as a final weight.
    """
    fst = Wfst()
    state_of = {}
    for hist in sorted(lm.probs, key=lambda h: (len(h), h)):
        state_of[hist] = fst.add_state()

    def longest_state(hist):
        hist = hist[-(lm.order - 1):] if lm.order > 1 else ()
        while hist not in state_of:
            hist = hist[1:]
        return hist

    def chained_backoff(hist):
        """Weight and target state for backing off from ``hist``."""
        scale = lm.backoff.get(hist, 1.0)
        lower = hist[1:]
        while lower not in state_of:
            scale *= lm.backoff.get(lower, 1.0)
            lower = lower[1:]
        return scale, lower

    for hist, table in lm.probs.items():
        src = state_of[hist]
        for w in sorted(table):
            p = table[w]
            if p <= 0:
                continue
            if w == EOS:
                fst.set_final(src, -math.log(p))
                continue
            dst = state_of[longest_state(hist + (w,))]
            wid = symbols.add(w)
            fst.add_arc(src, wid, wid, -math.log(p), dst)
        if hist:
            scale, lower = chained_backoff(hist)
            if scale > 0:
                fst.add_arc(src, EPSILON, EPSILON, -math.log(scale), state_of[lower])
    fst.set_start(state_of[longest_state((BOS,))] if lm.order > 1 else state_of[()])
    return fst


def fst_sentence_cost(G, words, symbols):
    """Cost of ``words`` through G, taking the backoff arc only when no word arc matches.

    This is the deterministic reading of the backoff machine; it equals
    ``-lm.sentence_logprob(words)``.
    """
    s = G.start
    total = 0.0
    for w in list(words) + [None]:
        label = symbols.get(w if w is not None else EOS)
        while True:
            if w is None and s in G.finals:
                return total + G.finals[s]
            arc = next((a for a in G.arcs[s] if a.ilabel == label and label != EPSILON), None) \
                if w is not None else None
            if arc is not None:
                total += arc.weight
                s = arc.nextstate
                break
            eps = next((a for a in G.arcs[s] if a.ilabel == EPSILON), None)
            if eps is None:
                return math.inf
            total += eps.weight
            s = eps.nextstate
    return total
