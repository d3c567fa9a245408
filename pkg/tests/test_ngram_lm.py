import itertools
import math
import random
from collections import Counter

import numpy as np
import pytest

from convasr import kernels, ngram_lm
from convasr.errors import ArpaFormatError, ConfigError, TrainingError
from convasr.ngram_lm import BOS, EOS, UNK, PruneConfig


# ----------------------------------------------------------------------
# independent oracle: top-down recursive interpolated Kneser-Ney without
# pruning, straight from the definitions (fixed before the implementation)
# ----------------------------------------------------------------------


class KnOracle:
    def __init__(self, sentences, order):
        self.order = order
        self.raw = {m: Counter() for m in range(1, order + 1)}
        vocab = set()
        for s in sentences:
            toks = s.split()
            vocab.update(toks)
            padded = [BOS] + toks + [EOS]
            for m in range(1, order + 1):
                for i in range(len(padded) - m + 1):
                    self.raw[m][tuple(padded[i : i + m])] += 1
        self.vocab = sorted(vocab) + [EOS, UNK]

    def used(self, gram):
        """Count entering the discounting at gram's order."""
        m = len(gram)
        if m == self.order or gram[0] == BOS:
            return self.raw[m][gram]
        return len({g[0] for g in self.raw[m + 1] if g[1:] == gram})

    def discount(self, m):
        counts = [self.used(g) for g in self.raw[m]]
        if m == 1:
            counts = [self.used(g) for g in self.raw[1] if g[0] != BOS]
        counts = [c for c in counts if c > 0]
        n1 = counts.count(1)
        n2 = counts.count(2)
        if n1 == 0 or n2 == 0:
            return 0.75
        return n1 / (n1 + 2 * n2)

    def lam(self, h):
        m = len(h) + 1
        grams = [g for g in self.raw[m] if g[:-1] == h]
        den = sum(self.used(g) for g in grams)
        if den == 0:
            return 1.0
        npos = sum(1 for g in grams if self.used(g) > 0)
        return self.discount(m) * npos / den

    def prob(self, w, h=()):
        """Interpolated probability with full backoff, recursively."""
        if not h:
            if w == BOS:
                return 1e-99
            rows = [(g, self.used(g)) for g in self.raw[1] if g[0] != BOS]
            den = sum(c for _, c in rows)
            npos = sum(1 for _, c in rows if c > 0)
            d = self.discount(1)
            c = self.used((w,)) if w != UNK else 0
            return max(c - d, 0.0) / den + (d * npos / den) / (len(self.vocab))
        m = len(h) + 1
        gram = h + (w,)
        lower = self.prob(w, h[1:])
        if gram in self.raw[m]:
            grams = [g for g in self.raw[m] if g[:-1] == h]
            den = sum(self.used(g) for g in grams)
            if den == 0:
                return lower
            d = self.discount(m)
            return max(self.used(gram) - d, 0.0) / den + self.lam(h) * lower
        if h in self.raw[len(h)]:
            return self.lam(h) * lower
        return lower


TOY = ["a b c", "a c", "b a c"]


class TestTrainAgainstOracle:
    def test_symmetric_bigram(self):
        m = ngram_lm.train_from_texts(["a b", "a c"], 2, PruneConfig.none(2))
        assert m.log_prob("b", ["a"]) == pytest.approx(m.log_prob("c", ["a"]))

    def test_unigram_normalizes(self):
        m = ngram_lm.train_from_texts(["a a a"], 1, PruneConfig.none(1))
        total = sum(10 ** m.log_prob(w) for w in ("a", EOS, UNK))
        assert total == pytest.approx(1.0, abs=1e-6)
        # hand computation: den 4, D 0.75, two seen types, uniform over 3
        assert 10 ** m.log_prob("a") == pytest.approx(0.6875, abs=1e-7)

    def test_toy_corpus_matches_oracle(self):
        oracle = KnOracle(TOY, 2)
        m = ngram_lm.train_from_texts(TOY, 2, PruneConfig.none(2))
        for gram in m.tables[1]:
            h = tuple(m.id_to_token[i] for i in gram[:-1])
            w = m.id_to_token[gram[-1]]
            assert 10 ** m.log_prob(w, h) == pytest.approx(
                oracle.prob(w, h), abs=1e-6
            ), (h, w)
        for w in m.vocabulary():
            if w == BOS:
                continue
            assert 10 ** m.log_prob(w) == pytest.approx(
                oracle.prob(w), abs=1e-6
            ), w

    def test_toy_corpus_frozen_values(self):
        # hand-executed interpolated KN: D1 = 1/7, D2 = 1/2
        m = ngram_lm.train_from_texts(TOY, 2, PruneConfig.none(2))
        expect = {
            ("a", ()): 69 / 245,
            ("</s>", ()): 34 / 245,
            ("<unk>", ()): 4 / 245,
            ("b", ("a",)): 1 / 6 + (1 / 3) * (69 / 245),
            ("c", ("a",)): 1 / 2 + (1 / 3) * (69 / 245),
            ("c", ("b",)): 1 / 4 + (1 / 2) * (69 / 245),
            ("</s>", ("c",)): 2.5 / 3 + (1 / 6) * (34 / 245),
        }
        for (w, h), p in expect.items():
            assert 10 ** m.log_prob(w, h) == pytest.approx(p, abs=1e-6), (w, h)

    def test_backoff_queries_match_oracle(self):
        oracle = KnOracle(TOY, 3)
        m = ngram_lm.train_from_texts(TOY, 3, PruneConfig.none(3))
        rng = random.Random(3)
        toks = ["a", "b", "c", EOS, UNK, "zz"]
        for _ in range(150):
            w = rng.choice(toks)
            h = tuple(rng.choices(["a", "b", "c"], k=rng.randint(0, 2)))
            got = 10 ** m.log_prob(w, h)
            want = oracle.prob(w if w != "zz" else UNK, h)
            assert got == pytest.approx(want, abs=1e-6), (w, h)


class TestModelProperties:
    @pytest.mark.parametrize("order", [1, 2, 3, 5])
    def test_conditional_distributions_normalize(self, order):
        texts = ["a b c", "a c", "b a c", "c c b a", "a b"]
        m = ngram_lm.train_from_texts(texts, order, PruneConfig.none(order))
        histories = [(), ("a",), ("c", "b"), ("a", "b", "c"), ("zz",), (BOS,)]
        for h in histories:
            total = sum(
                10 ** m.log_prob(w, h) for w in m.vocabulary() if w != BOS
            )
            assert total == pytest.approx(1.0, abs=1e-6), h

    def test_pruned_model_normalizes(self):
        texts = ["a b c", "a c", "b a c", "c c b a", "a b", "a b c"]
        m = ngram_lm.train_from_texts(texts, 3)
        for h in [(), ("a",), ("a", "b"), ("b", "c")]:
            total = sum(
                10 ** m.log_prob(w, h) for w in m.vocabulary() if w != BOS
            )
            assert total == pytest.approx(1.0, abs=1e-6), h

    def test_pruning_monotone_and_vocab_preserved(self):
        texts = ["a b c", "a c", "b a c", "c c b a"]
        full = ngram_lm.train_from_texts(texts, 3, PruneConfig.none(3))
        pruned = ngram_lm.train_from_texts(texts, 3)
        for order in (2, 3):
            assert pruned.ngram_count(order) <= full.ngram_count(order)
        assert pruned.ngram_count(1) == full.ngram_count(1)
        assert pruned.vocabulary() == full.vocabulary()

    def test_document_order_invariance(self):
        a = ngram_lm.train_from_texts(["a b", "c d"], 2, PruneConfig.none(2))
        b = ngram_lm.train_from_texts(["c d", "a b"], 2, PruneConfig.none(2))
        assert a.tables == b.tables and a.vocab == b.vocab

    def test_oov_is_finite(self):
        m = ngram_lm.train_from_texts(TOY, 2)
        assert math.isfinite(m.log_prob("unseen", ["a"]))
        assert math.isfinite(m.log_prob("unseen", ["also", "unseen"]))

    def test_seen_history_beats_unseen(self):
        m = ngram_lm.train_from_texts(TOY, 2, PruneConfig.none(2))
        assert m.log_prob("b", ["a"]) > m.log_prob("b", ["c"])

    def test_sentence_chain_rule(self):
        m = ngram_lm.train_from_texts(TOY, 2, PruneConfig.none(2))
        expect = (
            m.log_prob("a", [BOS])
            + m.log_prob("b", [BOS, "a"])
            + m.log_prob(EOS, [BOS, "a", "b"])
        )
        assert m.sentence_log_prob("a b") == pytest.approx(expect)

    def test_empty_sentence(self):
        m = ngram_lm.train_from_texts(TOY, 2, PruneConfig.none(2))
        assert m.sentence_log_prob("") == pytest.approx(m.log_prob(EOS, [BOS]))

    def test_sentence_mass_bounded(self):
        m = ngram_lm.train_from_texts(TOY, 2, PruneConfig.none(2))
        words = [w for w in m.vocabulary() if w not in (BOS, EOS)]
        total = 0.0
        for length in (0, 1, 2):
            for sent in itertools.product(words, repeat=length):
                total += 10 ** m.sentence_log_prob(list(sent))
        assert total <= 1.0 + 1e-9

    def test_training_errors(self):
        with pytest.raises(TrainingError):
            ngram_lm.train([], 2)
        with pytest.raises(TrainingError):
            ngram_lm.train([[]], 2)
        with pytest.raises(ConfigError):
            ngram_lm.train([["a"]], 0)
        with pytest.raises(TrainingError):
            ngram_lm.train([["a", BOS]], 2)


class TestArpa:
    def test_round_trip_queries_identical(self, tmp_path):
        m = ngram_lm.train_from_texts(TOY + ["c b a"], 3)
        path = tmp_path / "m.arpa"
        ngram_lm.save_arpa(m, path)
        back = ngram_lm.load_arpa(path)
        rng = random.Random(17)
        toks = list(m.vocabulary()) + ["zz"]
        for _ in range(100):
            w = rng.choice(toks)
            h = tuple(rng.choices(toks, k=rng.randint(0, 3)))
            assert m.log_prob(w, h) == back.log_prob(w, h), (w, h)

    def test_resave_byte_identical(self, tmp_path):
        m = ngram_lm.train_from_texts(TOY, 2)
        p1, p2 = tmp_path / "a.arpa", tmp_path / "b.arpa"
        ngram_lm.save_arpa(m, p1)
        ngram_lm.save_arpa(ngram_lm.load_arpa(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_declared_counts_match_tables(self, tmp_path):
        m = ngram_lm.train_from_texts(TOY, 2)
        path = tmp_path / "m.arpa"
        ngram_lm.save_arpa(m, path)
        text = path.read_text()
        for order in (1, 2):
            assert f"ngram {order}={m.ngram_count(order)}" in text

    def test_count_mismatch_rejected(self, tmp_path):
        m = ngram_lm.train_from_texts(TOY, 2)
        path = tmp_path / "m.arpa"
        ngram_lm.save_arpa(m, path)
        lines = path.read_text().splitlines()
        lines[1] = "ngram 1=999"
        bad = tmp_path / "bad.arpa"
        bad.write_text("\n".join(lines) + "\n")
        with pytest.raises(ArpaFormatError, match="declared"):
            ngram_lm.load_arpa(bad)

    def test_malformed_header_rejected(self, tmp_path):
        bad = tmp_path / "bad.arpa"
        bad.write_text("\\data\\\nngram 1=oops\n")
        with pytest.raises(ArpaFormatError):
            ngram_lm.load_arpa(bad)

    def test_missing_end_rejected(self, tmp_path):
        bad = tmp_path / "bad.arpa"
        bad.write_text("\\data\\\nngram 1=1\n\n\\1-grams:\n-0.5\t<unk>\n")
        with pytest.raises(ArpaFormatError):
            ngram_lm.load_arpa(bad)

    def test_foreign_fixture_probabilities(self, tmp_path):
        # hand-verified backoff file in the standard layout
        fixture = "\n".join(
            [
                "\\data\\",
                "ngram 1=5",
                "ngram 2=3",
                "",
                "\\1-grams:",
                "-1\t<unk>",
                "-99\t<s>\t-0.30103",
                "-0.69897\t</s>",
                "-0.39794\ta\t-0.30103",
                "-0.69897\tb",
                "",
                "\\2-grams:",
                "-0.30103\t<s> a",
                "-0.52\ta b",
                "-0.18\ta </s>",
                "",
                "\\end\\",
            ]
        )
        path = tmp_path / "fixture.arpa"
        path.write_text(fixture + "\n")
        m = ngram_lm.load_arpa(path)
        assert m.order == 2
        # stored bigram
        assert 10 ** m.log_prob("a", ["<s>"]) == pytest.approx(0.5, abs=1e-6)
        # backoff: bow(<s>) * P(b) = 10^(-0.30103 - 0.69897)
        assert 10 ** m.log_prob("b", ["<s>"]) == pytest.approx(0.1, abs=1e-6)
        # backoff through a context with no bow entry (b)
        assert m.log_prob("a", ["b"]) == pytest.approx(-0.39794)
        assert m.log_prob("b", ["a"]) == pytest.approx(-0.52)


class TestDecodeTables:
    def test_state_machine_matches_dict_queries(self):
        m = ngram_lm.train_from_texts(TOY + ["c b a", "b b c"], 3)
        dt = ngram_lm.compile_decode_tables(m)
        rng = random.Random(23)
        for _ in range(100):
            sent = rng.choices(["a", "b", "c", "zz"], k=rng.randint(0, 6))
            state = dt.init_state
            total = 0.0
            for w in sent + [EOS]:
                lp, state = kernels.lm_lookup(state, dt.word_id(w), dt)
                total += lp
            expect = m.sentence_log_prob(sent) * ngram_lm.LN10
            assert total == pytest.approx(expect, abs=1e-9), sent

    def test_cached(self):
        m = ngram_lm.train_from_texts(TOY, 2)
        assert ngram_lm.compile_decode_tables(m) is ngram_lm.compile_decode_tables(m)
