"""Word error rate, written- and spoken-domain.

Spoken-domain scoring expands every written reference into the set of its
verbalizations (``project(T o V, output)``) and scores each hypothesis against
the alternative closest to it.
"""

import json
import string
from dataclasses import dataclass, field

from .errors import MissingRef, RuleError
from .wfst import compose, enumerate_paths, linear_fst, project

_TERMINAL_PUNCT = string.punctuation.replace("<", "").replace(">", "")


def normalize(words):
    """Lowercase and strip trailing punctuation; tokens that vanish are dropped."""
    if isinstance(words, str):
        words = words.split()
    out = []
    for w in words:
        w = w.lower().rstrip(_TERMINAL_PUNCT)
        if w:
            out.append(w)
    return out


def align(ref, hyp):
    """Levenshtein alignment with unit costs.

    Returns ``(errors, trace)`` where trace items are ``(op, ref_word, hyp_word)``
    and ``op`` is one of ``C`` (correct), ``S``, ``I``, ``D``. On equal cost the
    traceback prefers a diagonal move, then a deletion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (ri != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    trace = []
    i, j = n, m
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            trace.append(("C" if ref[i - 1] == hyp[j - 1] else "S", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            trace.append(("D", ref[i - 1], None))
            i -= 1
        else:
            trace.append(("I", None, hyp[j - 1]))
            j -= 1
    trace.reverse()
    return d[n][m], trace


def edit_distance(ref, hyp):
    return align(ref, hyp)[0]


@dataclass
class WerReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_length: int = 0
    traces: dict = field(default_factory=dict)

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self):
        if self.ref_length == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_length

    def add(self, utt_id, trace):
        for op, _, _ in trace:
            if op == "S":
                self.substitutions += 1
            elif op == "I":
                self.insertions += 1
            elif op == "D":
                self.deletions += 1
            if op != "I":
                self.ref_length += 1
        self.traces[utt_id] = trace

    def to_dict(self):
        return {"substitutions": self.substitutions, "insertions": self.insertions,
                "deletions": self.deletions, "ref_length": self.ref_length, "wer": self.wer,
                "utterances": {k: [[op, r, h] for op, r, h in tr] for k, tr in sorted(self.traces.items())}}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        """Aligned dump: one block per utterance, REF / HYP / ops rows."""
        lines = []
        for utt in sorted(self.traces):
            ref_row, hyp_row, op_row = [], [], []
            for op, r, h in self.traces[utt]:
                r = r if r is not None else "*" * len(h)
                h = h if h is not None else "*" * len(r)
                width = max(len(r), len(h))
                ref_row.append(r.ljust(width))
                hyp_row.append(h.ljust(width))
                op_row.append((op if op != "C" else "").ljust(width))
            lines += ["id: %s" % utt, "REF: " + " ".join(ref_row), "HYP: " + " ".join(hyp_row),
                      "     " + " ".join(op_row).rstrip(), ""]
        lines.append("WER %.2f%% (S=%d I=%d D=%d N=%d)" % (100 * self.wer, self.substitutions,
                                                             self.insertions, self.deletions,
                                                             self.ref_length))
        return "\n".join(lines) + "\n"


def _check_ids(refs, hyps):
    missing = sorted(set(hyps) - set(refs))
    if missing:
        raise MissingRef("hypotheses without a reference: %s" % ", ".join(map(str, missing[:5])))


def wer(refs, hyps):
    """Score ``hyps`` against ``refs`` (both ``id -> words``).

    References without a hypothesis count as fully deleted.
    """
    _check_ids(refs, hyps)
    report = WerReport()
    for utt in sorted(refs):
        _, trace = align(normalize(refs[utt]), normalize(hyps.get(utt, [])))
        report.add(utt, trace)
    return report


def spoken_references(written_refs, V, symbols):
    """``id -> sorted list of spoken alternatives`` for each written reference."""
    out = {}
    for utt, words in written_refs.items():
        words = normalize(words)
        missing = [w for w in words if w not in symbols]
        if missing:
            raise RuleError("reference %s uses words the verbalizer does not cover: %s"
                            % (utt, " ".join(missing)))
        spoken = project(compose(linear_fst(symbols.encode(words)), V), "output")
        alts = set()
        for _, olabels, _ in enumerate_paths(spoken):
            alts.add(tuple(symbols.decode(olabels)))
        if not alts:
            raise RuleError("reference %s has no verbalization" % utt)
        out[utt] = sorted(alts)
    return out


def spoken_wer(alternatives, hyps):
    """WER against the closest spoken alternative per utterance."""
    _check_ids(alternatives, hyps)
    report = WerReport()
    for utt in sorted(alternatives):
        hyp = normalize(hyps.get(utt, []))
        best = None
        for alt in alternatives[utt]:
            errors, trace = align(list(alt), hyp)
            if best is None or errors < best[0]:
                best = (errors, trace)
        report.add(utt, best[1])
    return report


def spoken_lm(G, V):
    """Spoken-domain LM: ``G`` composed with the written-to-spoken ``V``, projected onto its output.

    Every spoken string carries the LM cost of the written sentence it verbalizes.
    """
    return project(compose(G, V), "output")


def read_jsonl_words(path):
    """``id -> words`` from JSONL rows with ``id`` (or ``utterance_id``) and ``words``."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            utt = row.get("id", row.get("utterance_id"))
            words = row["words"]
            out[utt] = words.split() if isinstance(words, str) else list(words)
    return out
