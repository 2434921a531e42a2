"""Synthetic corpora for desk-scale experiments.

:class:`ToyTask` renders word sequences straight into feature space: every
word owns a small time-frequency template made of Gaussian bumps, words are
separated by short silences and everything is buried in white noise. Words
can share a template (homophones) to create acoustic ambiguity on purpose.
"""

import numpy as np

from .features import AudioClip, FeatureSequence

DEFAULT_WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
]


class ToyTask:
    """Class-conditioned Gaussian-bump features for a small vocabulary.

    ``sounds_like`` maps a word to another word whose template it reuses.
    """

    def __init__(self, words=DEFAULT_WORDS, dim=16, seed=0, noise=0.4, frame_shift=0.03,
                 sounds_like=None):
        self.words = list(words)
        self.dim = dim
        self.noise = noise
        self.frame_shift = frame_shift
        self.sounds_like = dict(sounds_like or {})
        rng = np.random.default_rng(seed)
        pairs = [(a, b) for a in range(dim) for b in range(dim) if b >= a + 3]
        picks = rng.choice(len(pairs), size=len(self.words), replace=False)
        self.templates = {}
        for w, p in zip(self.words, picks):
            if w in self.sounds_like:
                continue
            length = int(rng.integers(3, 6))
            lo, hi = pairs[p]
            self.templates[w] = self._template(length, lo, hi, rng)
        for w, twin in self.sounds_like.items():
            self.templates[w] = self.templates[twin]

    def _template(self, length, f1, f2, rng):
        t = np.arange(length)[:, None]
        f = np.arange(self.dim)[None, :]
        t1, t2 = rng.uniform(0, length - 1, size=2)
        bump1 = np.exp(-0.5 * ((t - t1) / 1.0) ** 2 - 0.5 * ((f - f1) / 1.0) ** 2)
        bump2 = np.exp(-0.5 * ((t - t2) / 1.0) ** 2 - 0.5 * ((f - f2) / 1.0) ** 2)
        return 2.5 * (bump1 + bump2)

    def render(self, words, rng):
        """Feature grid for ``words``: template per word, 0-2 silent frames between."""
        pieces = [np.zeros((int(rng.integers(1, 3)), self.dim))]
        prev = None
        for w in words:
            tpl = self.templates[w]
            if prev is not None:
                gap = int(rng.integers(0, 3))
                if w == prev or self.templates[prev] is tpl:
                    gap = max(gap, 1)
                pieces.append(np.zeros((gap, self.dim)))
            pieces.append(tpl)
            prev = w
        pieces.append(np.zeros((int(rng.integers(1, 3)), self.dim)))
        clean = np.concatenate(pieces)
        return FeatureSequence(clean + self.noise * rng.standard_normal(clean.shape), self.frame_shift)

    def sample_words(self, rng, min_words=3, max_words=8, words=None):
        pool = self.words if words is None else list(words)
        n = int(rng.integers(min_words, max_words + 1))
        return [pool[i] for i in rng.integers(0, len(pool), size=n)]

    def dataset(self, n, seed, min_words=3, max_words=8, sentences=None):
        """``n`` pairs of (features, words). ``sentences(rng)`` overrides word sampling."""
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            words = sentences(rng) if sentences else self.sample_words(rng, min_words, max_words)
            out.append((self.render(words, rng), words))
        return out


def tone_clip(words, vocab, sample_rate=16000, word_dur=0.3, gap=0.1, seed=0, noise=0.01):
    """Crude audio for CLI demos: each word is a pair of tones picked by its vocabulary index."""
    rng = np.random.default_rng(seed)
    parts = [np.zeros(int(gap * sample_rate))]
    t = np.arange(int(word_dur * sample_rate)) / sample_rate
    for w in words:
        k = list(vocab).index(w)
        f1 = 300.0 + 150.0 * (k % 10)
        f2 = 1800.0 + 400.0 * (k // 10)
        env = np.sin(np.pi * t / word_dur)
        parts.append(0.3 * env * (np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t)))
        parts.append(np.zeros(int(gap * sample_rate)))
    x = np.concatenate(parts)
    return AudioClip(np.clip(x + noise * rng.standard_normal(x.shape), -1, 1), sample_rate)


class HomophoneCorpus:
    """Written sentences with numbers and homophones, rendered through their spoken forms.

    Written "2" and "4" are read "two" and "four", which sound exactly like
    "too" and "for". Acoustically the pairs are indistinguishable; only the
    word context separates them ("number 2" against "me too", "number 4"
    against "for me").
    """

    fillers = DEFAULT_WORDS[:10]
    readings = {"2": "two", "4": "four"}
    phrases = [("number", "2"), ("number", "4"), ("me", "too"), ("for", "me")]

    def __init__(self, seed=0, noise=0.4):
        self.written_words = self.fillers + ["number", "me", "2", "4", "too", "for"]
        self.spoken_words = self.fillers + ["number", "me", "two", "four", "too", "for"]
        self.task = ToyTask(self.spoken_words, seed=seed, noise=noise,
                            sounds_like={"too": "two", "for": "four"})
        self._to_written = {v: k for k, v in self.readings.items()}

    def spoken(self, written):
        return [self.readings.get(w, w) for w in written]

    def written(self, spoken):
        return [self._to_written.get(w, w) for w in spoken]

    def sentence(self, rng):
        """Filler, phrase, filler, optionally another phrase and filler."""
        out = [self.fillers[rng.integers(len(self.fillers))]]
        for _ in range(int(rng.integers(1, 3))):
            out += list(self.phrases[rng.integers(len(self.phrases))])
            out.append(self.fillers[rng.integers(len(self.fillers))])
        return out

    def text(self, n, seed):
        rng = np.random.default_rng(seed)
        return [self.sentence(rng) for _ in range(n)]

    def acoustic_data(self, n, seed, min_words=3, max_words=8):
        """Random spoken word strings (no grammar) as ``(features, spoken, written)``."""
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            spoken = self.task.sample_words(rng, min_words, max_words)
            out.append((self.task.render(spoken, rng), spoken, self.written(spoken)))
        return out

    def test_data(self, n, seed):
        """Grammatical sentences as ``(features, spoken, written)``."""
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            written = self.sentence(rng)
            spoken = self.spoken(written)
            out.append((self.task.render(spoken, rng), spoken, written))
        return out
