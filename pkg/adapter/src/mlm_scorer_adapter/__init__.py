"""Masked-LM scorer adapter.

Serves the newline-delimited JSON scorer protocol (one request and one
response object per line) backed by a BERT-family runtime: masked
pseudo-log-likelihood scoring, next-sentence-head scoring, and
classification-head scoring, plus a fine-tuning entry point that consumes
the decoder pipeline's generated task records.
"""

__version__ = "0.1.0"
