"""Edit-distance and error-rate evaluation.

All corpus-level rates are *total* rates: the summed edit distance over all
pairs divided by the summed reference length, not the mean of per-utterance
rates.  Tokenization splits on runs of whitespace; no case folding or
punctuation stripping is applied.  Character error rates count the reference's
inter-word spaces.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from . import kernels


def _tokens(text):
    if isinstance(text, str):
        return tuple(text.split())
    toks = tuple(text)
    for tok in toks:
        if not tok or any(ch.isspace() for ch in tok):
            raise MetricError(f"token {tok!r} is empty or contains whitespace")
    return toks


@dataclass(frozen=True)
class EvalPair:
    """A (reference, hypothesis) pair; empty references must be flagged."""

    reference: tuple
    hypothesis: tuple
    allow_empty_reference: bool = False

    def __init__(self, reference, hypothesis, allow_empty_reference=False):
        ref = _tokens(reference)
        hyp = _tokens(hypothesis)
        if not ref and not allow_empty_reference:
            raise MetricError("empty reference not flagged as allowed")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "hypothesis", hyp)
        object.__setattr__(self, "allow_empty_reference", allow_empty_reference)


@dataclass
class WerReport:
    """Totals plus per-length-bin breakdown of a WER evaluation."""

    total_edits: int
    total_reference_words: int
    wer: float
    cer: float
    per_bin: dict = field(default_factory=dict)  # bin start -> (edits, words)


def _id_arrays(a, b):
    ids = {}
    for tok in a:
        ids.setdefault(tok, len(ids))
    for tok in b:
        ids.setdefault(tok, len(ids))
    xa = np.fromiter((ids[t] for t in a), dtype=np.int64, count=len(a))
    xb = np.fromiter((ids[t] for t in b), dtype=np.int64, count=len(b))
    return xa, xb


def word_edit_distance(a, b):
    """Word-level Levenshtein distance between two token sequences."""
    ta, tb = _tokens(a), _tokens(b)
    xa, xb = _id_arrays(ta, tb)
    return kernels.levenshtein(xa, xb)


def char_edit_distance(a, b):
    """Character-level Levenshtein distance, spaces included."""
    sa = " ".join(_tokens(a))
    sb = " ".join(_tokens(b))
    xa, xb = _id_arrays(sa, sb)
    return kernels.levenshtein(xa, xb)


def _as_pairs(pairs):
    out = []
    for p in pairs:
        if isinstance(p, EvalPair):
            out.append(p)
        else:
            ref, hyp = p
            out.append(EvalPair(ref, hyp, allow_empty_reference=True))
    return out


def total_wer(pairs):
    """Total word error rate: sum of edit distances over sum of reference words."""
    pairs = _as_pairs(pairs)
    words = sum(len(p.reference) for p in pairs)
    if words == 0:
        raise MetricError("total reference word count is zero; WER undefined")
    edits = sum(word_edit_distance(p.reference, p.hypothesis) for p in pairs)
    return edits / words


def char_error_rate(pairs):
    """Total character error rate over the reference characters (with spaces)."""
    pairs = _as_pairs(pairs)
    chars = sum(len(" ".join(p.reference)) for p in pairs)
    if chars == 0:
        raise MetricError("total reference character count is zero; CER undefined")
    edits = sum(char_edit_distance(p.reference, p.hypothesis) for p in pairs)
    return edits / chars


def werr(wer_baseline, wer_rescored, wer_oracle):
    """Fraction of the baseline-to-oracle WER gap recovered by rescoring."""
    gap = wer_baseline - wer_oracle
    if gap == 0:
        raise MetricError("baseline equals oracle WER: degenerate beam")
    if gap < 0:
        raise MetricError("baseline WER below oracle WER")
    return (wer_baseline - wer_rescored) / gap


def bin_start(reference_length, bin_width=4):
    """Start of the length bin [i, i + bin_width] holding this reference length."""
    if reference_length <= 0:
        return 0
    return ((reference_length - 1) // (bin_width + 1)) * (bin_width + 1) + 1


def binned_wer(pairs, bin_width=4):
    """WER report with per-length-bin totals (bins [1,1+w], [2+w,2+2w], ...)."""
    if bin_width < 1:
        raise MetricError("bin_width must be >= 1")
    pairs = _as_pairs(pairs)
    per_bin = {}
    total_edits = 0
    total_words = 0
    char_edits = 0
    char_count = 0
    for p in pairs:
        edits = word_edit_distance(p.reference, p.hypothesis)
        nwords = len(p.reference)
        start = bin_start(nwords, bin_width)
        e, w = per_bin.get(start, (0, 0))
        per_bin[start] = (e + edits, w + nwords)
        total_edits += edits
        total_words += nwords
        char_edits += char_edit_distance(p.reference, p.hypothesis)
        char_count += len(" ".join(p.reference))
    if total_words == 0:
        raise MetricError("total reference word count is zero; WER undefined")
    return WerReport(
        total_edits=total_edits,
        total_reference_words=total_words,
        wer=total_edits / total_words,
        cer=(char_edits / char_count) if char_count else 0.0,
        per_bin=dict(sorted(per_bin.items())),
    )


def write_report_kv(report, path):
    """Line-delimited key-value emission of a WerReport."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"total_edits\t{report.total_edits}\n")
        fh.write(f"total_reference_words\t{report.total_reference_words}\n")
        fh.write(f"wer\t{report.wer:.9g}\n")
        fh.write(f"cer\t{report.cer:.9g}\n")
        for start, (edits, words) in report.per_bin.items():
            fh.write(f"bin_{start}\t{edits}\t{words}\n")


def write_report_csv(report, path):
    """CSV emission (bin_start, edits, words, wer) for length-binned plots."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start", "edits", "words", "wer"])
        for start, (edits, words) in report.per_bin.items():
            wer = edits / words if words else 0.0
            writer.writerow([start, edits, words, f"{wer:.9g}"])
