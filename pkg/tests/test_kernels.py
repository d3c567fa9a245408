"""Backend equivalence for the hot kernels."""

import functools

import numpy as np
import pytest

from convasr import corpus, ctc_decoder, kernels, trie_vocab


def brute_levenshtein(a, b):
    """Exponential-recursion edit distance with memoization (oracle)."""

    @functools.lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        cost = 0 if a[i] == b[j] else 1
        return min(rec(i + 1, j + 1) + cost, rec(i + 1, j) + 1, rec(i, j + 1) + 1)

    return rec(0, 0)


def test_levenshtein_backends_match_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = rng.integers(0, 4, size=rng.integers(0, 9))
        b = rng.integers(0, 4, size=rng.integers(0, 9))
        expect = brute_levenshtein(tuple(a), tuple(b))
        assert kernels._levenshtein_numpy(a, b) == expect
        assert int(kernels._levenshtein_jit(a, b)) == expect
        assert int(kernels.levenshtein_python(a, b)) == expect


def test_backend_switch():
    assert kernels.active_backend() in ("numba", "numpy")
    previous = kernels.active_backend()
    kernels.set_backend("numpy")
    assert kernels.active_backend() == "numpy"
    a = np.array([1, 2, 3], dtype=np.int64)
    b = np.array([1, 3], dtype=np.int64)
    assert kernels.levenshtein(a, b) == 1
    if kernels.JIT_BUILT:
        kernels.set_backend("numba")
        assert kernels.levenshtein(a, b) == 1
    kernels.set_backend(previous)
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


@pytest.mark.skipif(not kernels.JIT_BUILT, reason="numba backend unavailable")
def test_beam_search_backends_identical():
    rng = np.random.default_rng(42)
    alphabet = ("_", " ", "a", "b")
    trie = trie_vocab.build({"a", "ab", "b"})
    for trial in range(12):
        T = int(rng.integers(2, 9))
        frames = rng.dirichlet(np.ones(4) * 0.4, size=T)
        z = corpus.LogitMatrix(f"t{trial}", frames, alphabet)
        for cfg in (
            ctc_decoder.BeamConfig(beam_width=16),
            ctc_decoder.BeamConfig(beam_width=16, alpha=0.0, beta=0.4, trie=trie),
        ):
            kernels.set_backend("numba")
            nb_jit = ctc_decoder.beam_search(z, cfg)
            kernels.set_backend("numpy")
            nb_py = ctc_decoder.beam_search(z, cfg)
            kernels.set_backend("numba")
            got = [(c.text, c.log_am, c.log_bs) for c in nb_jit.candidates]
            expect = [(c.text, c.log_am, c.log_bs) for c in nb_py.candidates]
            assert got == expect
            assert nb_jit.pruned_mass == nb_py.pruned_mass
