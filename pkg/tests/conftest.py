import numpy as np
import pytest

from convasr import ctc_decoder, ngram_lm, synthdata, trie_vocab


@pytest.fixture(scope="session")
def small_world():
    """A small decoded synthetic world shared by rescoring/taskgen tests."""
    convs = synthdata.make_corpus(n_train=24, n_eval=8, n_test=6, seed=5)
    train_texts = synthdata.training_texts(convs, "train")
    lm2 = ngram_lm.train_from_texts(train_texts, order=2)
    lm6 = ngram_lm.train_from_texts(train_texts, order=6)
    vocab = sorted({w for t in train_texts for w in t.split()})
    trie = trie_vocab.build(vocab)
    logits = synthdata.make_logits(convs, noise=0.3, seed=9)
    cfg = ctc_decoder.BeamConfig(
        beam_width=64, alpha=1.0, beta=0.5, lm=lm2, trie=trie
    )
    eval_utts = [u for c in convs if c.split == "eval" for u in c.utterances]
    nbests = {u.id: ctc_decoder.beam_search(logits[u.id], cfg) for u in eval_utts}
    return {
        "conversations": convs,
        "train_texts": train_texts,
        "lm2": lm2,
        "lm6": lm6,
        "trie": trie,
        "logits": logits,
        "cfg": cfg,
        "eval_utts": eval_utts,
        "nbests": nbests,
    }
