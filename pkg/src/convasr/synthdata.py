"""Desk-scale synthetic conversational corpus and acoustic outputs.

Sentences follow a small generative grammar over words spelled with the
letters a-h: each block is ``anchor "de" target [filler]`` where the target
word is a deterministic function of the anchor.  All eight target words share
the connector context "de", so a bigram model cannot choose between them
while any model with three or more words of context can.  Several target
pairs differ by a single character, which acoustic corruption readily
confuses.

This gives the pipeline the orderings it needs to demonstrate: vocabulary
constraints fix non-word greedy errors, bigram fusion fixes anchor and filler
errors, and a longer-context rescorer recovers the target words the bigram
cannot.
"""

import zlib

import numpy as np

from .corpus import (
    UNINTELLIGIBLE_TOKEN,
    Conversation,
    Utterance,
    synth_logits,
    utterance_file_id,
)

DEFAULT_ALPHABET = ("_", " ", "a", "b", "c", "d", "e", "f", "g", "h")

ANCHORS = ("cab", "dab", "gab", "hag", "bag", "fad", "gad", "had")
TARGETS = ("bad", "bed", "face", "fade", "cage", "cafe", "bead", "head")
CONNECTOR = "de"
FILLERS = ("egg", "add", "ebb", "fee", "dead", "edge")
_FILLER_P = (0.30, 0.25, 0.20, 0.10, 0.10, 0.05)

TARGET_OF = dict(zip(ANCHORS, TARGETS))


def word_list():
    """Every word the generator can emit."""
    return sorted(set(ANCHORS) | set(TARGETS) | {CONNECTOR} | set(FILLERS))


def _sentence(rng, marker_rate, marker_token):
    words = []
    for _ in range(int(rng.integers(1, 3))):
        anchor = ANCHORS[int(rng.integers(len(ANCHORS)))]
        words += [anchor, CONNECTOR, TARGET_OF[anchor]]
        if rng.random() < 0.6:
            words.append(FILLERS[int(rng.choice(len(FILLERS), p=_FILLER_P))])
    if marker_rate > 0 and rng.random() < marker_rate:
        # unintelligible speech in the ground truth; unreachable for the
        # decoder, so it raises the oracle WER floor like real data does
        words.insert(int(rng.integers(len(words) + 1)), marker_token)
    return " ".join(words)


def make_corpus(
    n_train=60,
    n_eval=24,
    n_test=24,
    utt_range=(4, 8),
    marker_rate=0.03,
    marker_token=UNINTELLIGIBLE_TOKEN,
    seed=0,
):
    """Generate conversations with whole-conversation split assignment."""
    rng = np.random.default_rng(seed)
    conversations = []
    plan = [("train", n_train), ("eval", n_eval), ("test", n_test)]
    serial = 0
    for split, count in plan:
        for _ in range(count):
            cid = f"c{serial:04d}"
            serial += 1
            n_utts = int(rng.integers(utt_range[0], utt_range[1] + 1))
            utts = []
            for i in range(n_utts):
                utts.append(
                    Utterance(
                        id=utterance_file_id(cid, i),
                        conversation_id=cid,
                        index=i,
                        text=_sentence(rng, marker_rate, marker_token),
                        speaker="A" if i % 2 == 0 else "B",
                    )
                )
            conversations.append(
                Conversation(id=cid, utterances=tuple(utts), split=split)
            )
    return conversations


def make_logits(
    conversations,
    noise=0.4,
    seed=0,
    alphabet=DEFAULT_ALPHABET,
    marker_token=UNINTELLIGIBLE_TOKEN,
):
    """Synthesize one LogitMatrix per utterance, seeded per utterance.

    Ground-truth unintelligible markers are rendered as a short random
    letter garble: the decoder hears something, but no transcript matches.
    """
    letters = [ch for ch in alphabet if ch not in ("_", " ")]
    out = {}
    for conv in conversations:
        for utt in conv.utterances:
            sub_seed = [seed, zlib.crc32(utt.id.encode("utf-8"))]
            rng = np.random.default_rng(sub_seed)
            words = []
            for tok in utt.tokens:
                if tok == marker_token:
                    n = int(rng.integers(2, 5))
                    words.append(
                        "".join(letters[int(rng.integers(len(letters)))] for _ in range(n))
                    )
                else:
                    words.append(tok)
            matrix = synth_logits(
                " ".join(words),
                alphabet,
                noise,
                sub_seed,
                utterance_id=utt.id,
            )
            out[utt.id] = matrix
    return out


def training_texts(conversations, split="train"):
    return [
        utt.text
        for conv in conversations
        if conv.split == split
        for utt in conv.utterances
    ]
