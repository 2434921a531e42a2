"""
Islands of confidence
=====================

User captions are noisy labels. Where a caption and the recognizer's output
agree for a few words in a row, both are probably right, so only those
stretches of audio are kept for training.
"""

from nsr.datafilter import CaptionedUtterance, caption_biased_lm, find_islands, retention_stats
from nsr.language import build_vocab, train_ngram

hyp = "so the meeting is on tuesday at ten uh in the large room".split()
caption = "The meeting is on Tuesday at 10 in the large room."
spans = [(0.3 * i, 0.3 * i + 0.25) for i in range(len(hyp))]
u = CaptionedUtterance("u1", caption, hyp, spans)

for min_island in (1, 3, 5):
    islands = find_islands(u, min_island)
    print("min_island=%d:" % min_island, [" ".join(i.words) for i in islands])

islands = find_islands(u, 3)
stats = retention_stats({u.id: islands}, [u])
print("kept %.0f%% of the audio in %d segments" % (100 * stats["retained_fraction"], stats["segment_count"]))

# biasing the LM toward the caption before a second recognition pass
corpus = ["the meeting is on monday", "in the small room", "the room is large"]
background = train_ngram(corpus, 2, build_vocab(corpus + [caption.lower()]))
biased = caption_biased_lm(background, caption.lower().rstrip("."), 0.5)
print("p(tuesday | on): background %.3f, caption-biased %.3f"
      % (background.prob("tuesday", ("on",)), biased.prob("tuesday", ("on",))))
