"""Generation of the two LM fine-tuning datasets and pairwise evaluation sets.

* Conversational next-utterance triplets: positives are consecutive utterance
  triplets (sliding window); negatives replace the third utterance with one
  drawn from a different conversation of the same split.
* Disambiguation samples: one positive per N-best group (the oracle candidate
  or the ground truth) plus negatives sampled uniformly without replacement
  from candidates with strictly higher word edit distance.

All generators are deterministic for a fixed seed; per-group RNGs are derived
from (seed, group index) so group-parallel generation stays reproducible.
Samples carry their WED annotations so external trainers can reweight without
recomputation.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, IntegrityError
from .metrics import word_edit_distance
from .rescoring import oracle_select


@dataclass(frozen=True)
class CnspSample:
    first: str
    second: str
    third: str
    label: str  # positive | negative
    source_conversation: str
    negative_source: str | None = None


@dataclass(frozen=True)
class DisambiguationSample:
    context: tuple  # ground-truth context texts, oldest first
    candidate: str
    label: str
    utterance_id: str
    candidate_wed: int

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))


@dataclass(frozen=True)
class PairwiseSample:
    context: tuple
    positive: str
    negative: str
    utterance_id: str
    flip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))


def gen_cnsp(conversations, negative_ratio=0.5, seed=0):
    """Consecutive-utterance triplets with cross-conversation negatives."""
    if not 0.0 <= negative_ratio < 1.0:
        raise GenerationError("negative_ratio must lie in [0, 1)")
    convs = sorted(conversations, key=lambda c: c.id)
    splits = sorted({c.split for c in convs})
    samples = []
    for split in splits:
        group = [c for c in convs if c.split == split]
        positives = []
        for conv in group:
            texts = [u.text for u in conv.utterances]
            for i in range(len(texts) - 2):
                positives.append(
                    CnspSample(
                        first=texts[i],
                        second=texts[i + 1],
                        third=texts[i + 2],
                        label="positive",
                        source_conversation=conv.id,
                    )
                )
        n_neg = round(len(positives) * negative_ratio / (1.0 - negative_ratio))
        negatives = []
        if n_neg:
            foreign = {
                conv.id: [
                    (other.id, u.text)
                    for other in group
                    if other.id != conv.id
                    for u in other.utterances
                ]
                for conv in group
            }
            rng = np.random.default_rng([seed, len(samples)])
            for i in range(n_neg):
                base = positives[i % len(positives)]
                pool = foreign[base.source_conversation]
                if not pool:
                    raise GenerationError(
                        f"split {split!r}: negatives need a second conversation"
                    )
                src, text = pool[int(rng.integers(len(pool)))]
                negatives.append(
                    CnspSample(
                        first=base.first,
                        second=base.second,
                        third=text,
                        label="negative",
                        source_conversation=base.source_conversation,
                        negative_source=src,
                    )
                )
        samples.extend(positives)
        samples.extend(negatives)
    return samples


def _eligible_negatives(nbest, reference, oracle_wed):
    out = []
    for cand in nbest.candidates:
        wed = word_edit_distance(reference, cand.text)
        if wed > oracle_wed:
            out.append((cand.text, wed))
    return out


def gen_disambiguation(
    nbest_sets, target="oracle", negatives_per_sample=2, seed=0
):
    """Labeled (context, candidate) samples from N-best groups.

    `nbest_sets` is a sequence of (NBestList, reference text, ContextWindow).
    Returns (samples, dropped_groups); groups with no strictly-worse
    candidate are dropped.
    """
    if target not in ("oracle", "ground_truth"):
        raise GenerationError(f"unknown target {target!r}")
    if negatives_per_sample < 1:
        raise GenerationError("negatives_per_sample must be >= 1")
    samples = []
    dropped = 0
    for group_index, (nbest, reference, window) in enumerate(nbest_sets):
        ref_tokens = reference.split() if isinstance(reference, str) else reference
        ref_text = " ".join(ref_tokens)
        oracle = oracle_select(nbest, ref_text)
        oracle_wed = word_edit_distance(ref_text, oracle.text)
        eligible = _eligible_negatives(nbest, ref_text, oracle_wed)
        if not eligible:
            dropped += 1
            continue
        if target == "oracle":
            positive_text, positive_wed = oracle.text, oracle_wed
        else:
            positive_text, positive_wed = ref_text, 0
        context = tuple(window.utterances)
        samples.append(
            DisambiguationSample(
                context=context,
                candidate=positive_text,
                label="positive",
                utterance_id=nbest.utterance_id,
                candidate_wed=positive_wed,
            )
        )
        rng = np.random.default_rng([seed, group_index])
        take = min(negatives_per_sample, len(eligible))
        chosen = rng.choice(len(eligible), size=take, replace=False)
        for idx in sorted(int(i) for i in chosen):
            text, wed = eligible[idx]
            samples.append(
                DisambiguationSample(
                    context=context,
                    candidate=text,
                    label="negative",
                    utterance_id=nbest.utterance_id,
                    candidate_wed=wed,
                )
            )
    return samples, dropped


def gen_pairwise_eval(nbest_sets, seed=0):
    """One balanced (context, oracle, worse-candidate) pair per N-best group.

    Presentation order is randomized per pair via the ``flip`` flag; the
    evaluation harness uses each pair once in each orientation for its
    positive/negative accounting.  Returns (pairs, dropped_groups).
    """
    pairs = []
    dropped = 0
    for group_index, (nbest, reference, window) in enumerate(nbest_sets):
        ref_tokens = reference.split() if isinstance(reference, str) else reference
        ref_text = " ".join(ref_tokens)
        oracle = oracle_select(nbest, ref_text)
        oracle_wed = word_edit_distance(ref_text, oracle.text)
        eligible = _eligible_negatives(nbest, ref_text, oracle_wed)
        if not eligible:
            dropped += 1
            continue
        rng = np.random.default_rng([seed, group_index])
        text, _ = eligible[int(rng.integers(len(eligible)))]
        pairs.append(
            PairwiseSample(
                context=tuple(window.utterances),
                positive=oracle.text,
                negative=text,
                utterance_id=nbest.utterance_id,
                flip=bool(rng.integers(2)),
            )
        )
    return pairs, dropped


# ----------------------------------------------------------------------
# sample record files (line-delimited JSON)
# ----------------------------------------------------------------------


def write_samples(samples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            if isinstance(s, CnspSample):
                obj = {
                    "kind": "cnsp",
                    "label": s.label,
                    "texts": [s.first, s.second, s.third],
                    "source_conversation": s.source_conversation,
                    "negative_source": s.negative_source,
                }
            elif isinstance(s, DisambiguationSample):
                obj = {
                    "kind": "disambiguation",
                    "label": s.label,
                    "context": list(s.context),
                    "candidate": s.candidate,
                    "utterance_id": s.utterance_id,
                    "wed": s.candidate_wed,
                }
            elif isinstance(s, PairwiseSample):
                obj = {
                    "kind": "pairwise",
                    "context": list(s.context),
                    "positive": s.positive,
                    "negative": s.negative,
                    "utterance_id": s.utterance_id,
                    "flip": s.flip,
                }
            else:
                raise IntegrityError(f"unknown sample type {type(s).__name__}")
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_samples(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                kind = obj["kind"]
                if kind == "cnsp":
                    out.append(
                        CnspSample(
                            first=obj["texts"][0],
                            second=obj["texts"][1],
                            third=obj["texts"][2],
                            label=obj["label"],
                            source_conversation=obj["source_conversation"],
                            negative_source=obj.get("negative_source"),
                        )
                    )
                elif kind == "disambiguation":
                    out.append(
                        DisambiguationSample(
                            context=tuple(obj["context"]),
                            candidate=obj["candidate"],
                            label=obj["label"],
                            utterance_id=obj["utterance_id"],
                            candidate_wed=int(obj["wed"]),
                        )
                    )
                elif kind == "pairwise":
                    out.append(
                        PairwiseSample(
                            context=tuple(obj["context"]),
                            positive=obj["positive"],
                            negative=obj["negative"],
                            utterance_id=obj["utterance_id"],
                            flip=bool(obj.get("flip", False)),
                        )
                    )
                else:
                    raise IntegrityError(f"line {lineno}: unknown kind {kind!r}")
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise IntegrityError(f"{path}:{lineno}: bad sample record: {exc}")
    return out
