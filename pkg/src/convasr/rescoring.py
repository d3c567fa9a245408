"""N-best reranking with an external scorer, plus oracle selection.

The rescored score of a candidate is the interpolation

    (1 - gamma) * log_bs + gamma * rescorer_score

with both terms in natural log.  An optional per-utterance standardization
(zero-mean scorer scores over the N-best) is available for scale robustness;
raw log scores are the default.
"""

from dataclasses import dataclass, replace

import numpy as np

from .ctc_decoder import NBestList
from .errors import ConfigError, MetricError, ScorerError
from .metrics import word_edit_distance

SCORER_MODES = ("mlm_pll", "nsp", "classifier")


@dataclass
class RescoreConfig:
    """Interpolation weight and scorer mode for rescoring runs."""

    gamma: float = 0.0
    scorer_mode: str = "mlm_pll"
    standardize: bool = False

    def validate(self):
        if not 0.0 <= self.gamma <= 0.5:
            raise ConfigError("gamma must lie in the searched range [0, 0.5]")
        if self.scorer_mode not in SCORER_MODES:
            raise ConfigError(f"unknown scorer mode {self.scorer_mode!r}")


def top_candidate(nbest):
    """The candidate maximizing the fused beam score (ties: lowest rank)."""
    if not nbest.candidates:
        raise MetricError(f"{nbest.utterance_id}: empty n-best list")
    return max(nbest.candidates, key=lambda c: (c.log_bs, -c.rank))


def oracle_select(nbest, reference):
    """The candidate closest to the reference in word edit distance.

    Ties are broken by higher fused score, then by lower original rank.
    """
    if not nbest.candidates:
        raise MetricError(f"{nbest.utterance_id}: empty n-best list")
    best = None
    best_key = None
    for cand in nbest.candidates:
        wed = word_edit_distance(reference, cand.text)
        key = (wed, -cand.log_bs, cand.rank)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    return best


def interpolate(nbest, scores, gamma, standardize=False):
    """Rerank an N-best list by interpolating with scorer scores.

    `scores` maps candidate text to a natural-log scorer score; every
    candidate must be covered.  Original score components and ranks are
    preserved on the returned candidates.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError("gamma must lie in [0, 1]")
    missing = [c.text for c in nbest.candidates if c.text not in scores]
    if missing:
        raise ScorerError(
            f"{nbest.utterance_id}: missing scorer score for {missing[0]!r} "
            f"(+{len(missing) - 1} more)"
        )
    values = {t: float(scores[t]) for t in (c.text for c in nbest.candidates)}
    if standardize and values:
        mean = sum(values.values()) / len(values)
        values = {t: v - mean for t, v in values.items()}

    rescored = [replace(c, rescorer_score=values[c.text]) for c in nbest.candidates]
    rescored.sort(
        key=lambda c: (-((1 - gamma) * c.log_bs + gamma * c.rescorer_score), c.rank)
    )
    return NBestList(
        utterance_id=nbest.utterance_id,
        candidates=tuple(rescored),
        pruned_mass=nbest.pruned_mass,
    )


def rescored_top(nbest, scores, gamma, standardize=False):
    """Top candidate after interpolation (the rescored transcript)."""
    return interpolate(nbest, scores, gamma, standardize=standardize).candidates[0]
