"""Keep only the stretches of captioned audio where caption and recognizer agree.

Caption and hypothesis are aligned word by word; maximal runs of consecutive
exact matches at least ``min_island`` long become islands, each carrying the
time span of its hypothesis words.
"""

import csv
import json
from dataclasses import dataclass

from .errors import ConfigError, FormatError
from .language import NGramLm, train_ngram
from .scoring import align, normalize

DEFAULT_MIN_ISLAND = 3


@dataclass
class CaptionedUtterance:
    id: str
    caption: list
    hyp_words: list
    spans: list  # (t0, t1) per hypothesis word

    def __post_init__(self):
        if len(self.spans) != len(self.hyp_words):
            raise FormatError("%s: %d hypothesis words but %d time spans"
                              % (self.id, len(self.hyp_words), len(self.spans)))
        prev_end = float("-inf")
        for t0, t1 in self.spans:
            if t1 < t0 or t0 < prev_end:
                raise FormatError("%s: time spans must be ordered and non-overlapping" % self.id)
            prev_end = t1

    @property
    def duration(self):
        return sum(t1 - t0 for t0, t1 in self.spans)

    @classmethod
    def from_dict(cls, row):
        caption = row["caption"]
        hyp = row["hyp_words"]
        return cls(str(row["id"]), caption.split() if isinstance(caption, str) else list(caption),
                   [h["w"] for h in hyp], [(float(h["t0"]), float(h["t1"])) for h in hyp])


@dataclass
class Island:
    i0: int  # first hypothesis word
    i1: int  # one past the last
    t0: float
    t1: float
    words: list

    def __len__(self):
        return self.i1 - self.i0

    def to_dict(self):
        return {"i0": self.i0, "i1": self.i1, "t0": self.t0, "t1": self.t1, "words": self.words}


def find_islands(u, min_island=DEFAULT_MIN_ISLAND):
    if min_island < 1:
        raise ConfigError("min_island must be >= 1")
    hyp = normalize(u.hyp_words)
    if len(hyp) != len(u.hyp_words):
        raise FormatError("%s: hypothesis contains tokens that normalize to nothing" % u.id)
    _, trace = align(normalize(u.caption), hyp)
    islands = []
    run_start = None
    j = 0  # hypothesis index of the next trace step

    def close(end):
        if run_start is not None and end - run_start >= min_island:
            islands.append(Island(run_start, end, u.spans[run_start][0], u.spans[end - 1][1],
                                  hyp[run_start:end]))

    for op, _, _ in trace:
        if op == "C":
            if run_start is None:
                run_start = j
        else:
            close(j)
            run_start = None
        if op != "D":
            j += 1
    close(j)
    return islands


def caption_biased_lm(background, caption, weight):
    """Interpolate ``background`` with an LM of the same order estimated on ``caption`` alone.

    The result is again a backoff model: explicit entries are the union of
    both models' entries, and backoff weights are recomputed so that every
    history still sums to one.
    """
    if not 0 <= weight <= 1:
        raise ConfigError("weight must lie in [0, 1]")
    caption = caption.split() if isinstance(caption, str) else list(caption)
    if not caption:
        return background
    vocab = [w for w in background.words]
    cap = train_ngram([caption], background.order, vocab)

    def mix(word, hist):
        return (1 - weight) * background._prob(word, hist) + weight * cap._prob(word, hist)

    probs, backoff = {(): {w: mix(w, ()) for w in background.words}}, {}
    lm = NGramLm(background.order, background.words, probs, backoff)
    hists = sorted(set(background.probs) | set(cap.probs), key=lambda h: (len(h), h))
    for hist in hists:
        if not hist:
            continue
        seen = set(background.probs.get(hist, ())) | set(cap.probs.get(hist, ()))
        table = {w: mix(w, hist) for w in sorted(seen)}
        lower_seen = sum(lm._prob(w, hist[1:]) for w in table)
        denom = 1.0 - lower_seen
        if denom > 1e-12:
            backoff[hist] = max(0.0, 1.0 - sum(table.values())) / denom
        else:
            scale = 1.0 / sum(table.values())
            table = {w: p * scale for w, p in table.items()}
            backoff[hist] = 0.0
        probs[hist] = table
    return lm


def retention_stats(islands, utterances):
    """``islands`` maps utterance id to its island list."""
    total = sum(u.duration for u in utterances)
    kept = 0.0
    count = 0
    for u in utterances:
        for isl in islands.get(u.id, ()):
            kept += sum(t1 - t0 for t0, t1 in u.spans[isl.i0:isl.i1])
            count += 1
    return {"retained_fraction": kept / total if total > 0 else 0.0, "segment_count": count,
            "retained_duration": kept, "total_duration": total}


def read_captions(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(CaptionedUtterance.from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError("%s:%d: %s" % (path, n, exc))
    return out


def write_islands(path, islands):
    with open(path, "w", encoding="utf-8") as f:
        for utt in sorted(islands):
            f.write(json.dumps({"id": utt, "islands": [i.to_dict() for i in islands[utt]]},
                               sort_keys=True) + "\n")


def write_stats(path, stats):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        for key in ("retained_fraction", "segment_count", "retained_duration", "total_duration"):
            w.writerow([key, stats[key]])
