"""Acoustic-to-word CTC speech recognition at desk scale.

Modules: ``features`` (log-mel frontend), ``network`` (bidirectional LSTM
stack), ``ctc`` (loss, alignment, greedy decoding), ``wfst`` (transducers),
``language`` (vocabularies, verbalizer, n-gram LMs), ``lattice`` (rescoring),
``trainer`` (SGD training), ``datafilter`` (caption islands), ``scoring``
(word error rate) and ``cli``.
"""

__version__ = "0.1.0"
