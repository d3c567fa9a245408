"""convasr: decoding and rescoring toolkit for CTC-based conversational ASR.

Pipeline stages: n-gram LM training, vocabulary-constrained CTC prefix beam
search with shallow fusion, N-best rescoring through an external-scorer
protocol, oracle/recovery-rate evaluation, two-stage hyperparameter tuning,
and generation of conversational fine-tuning datasets.
"""

__version__ = "0.1.0"
