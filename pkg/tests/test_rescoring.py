import numpy as np
import pytest

from convasr import ctc_decoder, metrics, rescoring
from convasr.ctc_decoder import Candidate, NBestList
from convasr.errors import ConfigError, MetricError, ScorerError


def make_nbest(entries, utt="u"):
    cands = []
    for rank, (text, log_bs) in enumerate(entries):
        cands.append(
            Candidate(
                text=text,
                log_am=log_bs,
                log_lm=0.0,
                word_count=len(text.split()),
                log_bs=log_bs,
                rank=rank,
            )
        )
    return NBestList(utterance_id=utt, candidates=tuple(cands))


class TestTopCandidate:
    def test_single(self):
        nb = make_nbest([("a", -1.0)])
        assert rescoring.top_candidate(nb).text == "a"

    def test_two(self):
        nb = make_nbest([("a", -1.0), ("b", -2.0)])
        assert rescoring.top_candidate(nb).text == "a"

    def test_equals_linear_scan(self):
        rng = np.random.default_rng(0)
        entries = [(f"w{i}", float(rng.normal())) for i in range(20)]
        nb = make_nbest(entries)
        expect = max(entries, key=lambda e: e[1])[0]
        assert rescoring.top_candidate(nb).text == expect

    def test_empty_errors(self):
        with pytest.raises(MetricError):
            rescoring.top_candidate(NBestList("u", ()))


class TestOracleSelect:
    def test_reference_present(self):
        nb = make_nbest([("a c", -1.0), ("a b", -2.0)])
        cand = rescoring.oracle_select(nb, "a b")
        assert cand.text == "a b"
        assert metrics.word_edit_distance("a b", cand.text) == 0

    def test_closest_wins(self):
        nb = make_nbest([("a b", -1.0), ("a c", -2.0)])
        assert rescoring.oracle_select(nb, "a b").text == "a b"

    def test_tie_broken_by_score_then_rank(self):
        nb = make_nbest([("a x", -3.0), ("a y", -1.0), ("a z", -2.0)])
        assert rescoring.oracle_select(nb, "a b").text == "a y"

    def test_oracle_never_worse_than_top(self, small_world):
        for utt in small_world["eval_utts"]:
            nb = small_world["nbests"][utt.id]
            top_wed = metrics.word_edit_distance(
                utt.text, rescoring.top_candidate(nb).text
            )
            oracle_wed = metrics.word_edit_distance(
                utt.text, rescoring.oracle_select(nb, utt.text).text
            )
            assert oracle_wed <= top_wed


class TestInterpolate:
    def test_gamma_zero_reproduces_ranking(self):
        nb = make_nbest([("a", -1.0), ("b", -1.0), ("c", -2.0)])
        scores = {"a": -50.0, "b": 0.0, "c": 100.0}
        out = rescoring.interpolate(nb, scores, 0.0)
        assert [c.text for c in out.candidates] == ["a", "b", "c"]
        assert [c.rank for c in out.candidates] == [0, 1, 2]

    def test_gamma_one_ranks_by_scorer(self):
        nb = make_nbest([("a", -1.0), ("b", -2.0), ("c", -3.0)])
        scores = {"a": -5.0, "b": -1.0, "c": -3.0}
        out = rescoring.interpolate(nb, scores, 1.0)
        assert [c.text for c in out.candidates] == ["b", "c", "a"]

    def test_hand_interpolation(self):
        # (1-g)*log_bs + g*score at g=0.5: (-5.5, -1.5, -4) -> order 2, 3, 1
        nb = make_nbest([("one", -1.0), ("two", -2.0), ("three", -3.0)])
        scores = {"one": -10.0, "two": -1.0, "three": -5.0}
        out = rescoring.interpolate(nb, scores, 0.5)
        assert [c.text for c in out.candidates] == ["two", "three", "one"]

    def test_missing_score_errors(self):
        nb = make_nbest([("a", -1.0), ("b", -2.0)])
        with pytest.raises(ScorerError, match="missing"):
            rescoring.interpolate(nb, {"a": 0.0}, 0.2)

    def test_gamma_validated(self):
        nb = make_nbest([("a", -1.0)])
        with pytest.raises(ConfigError):
            rescoring.interpolate(nb, {"a": 0.0}, 1.5)

    def test_shift_invariance(self):
        nb = make_nbest([("a", -1.0), ("b", -1.5), ("c", -4.0)])
        scores = {"a": -3.0, "b": -1.0, "c": -2.0}
        shifted = {t: s + 123.4 for t, s in scores.items()}
        out1 = rescoring.interpolate(nb, scores, 0.3)
        out2 = rescoring.interpolate(nb, shifted, 0.3)
        assert [c.text for c in out1.candidates] == [
            c.text for c in out2.candidates
        ]

    def test_standardize_mode(self):
        nb = make_nbest([("a", -1.0), ("b", -1.5)])
        scores = {"a": -100.0, "b": -99.0}
        out = rescoring.interpolate(nb, scores, 0.4, standardize=True)
        values = {c.text: c.rescorer_score for c in out.candidates}
        assert values["a"] == pytest.approx(-0.5)
        assert values["b"] == pytest.approx(0.5)

    def test_components_preserved(self):
        nb = make_nbest([("a b", -1.0), ("c", -2.0)])
        out = rescoring.interpolate(nb, {"a b": -1.0, "c": 0.0}, 0.25)
        by_text = {c.text: c for c in out.candidates}
        for cand in nb.candidates:
            got = by_text[cand.text]
            assert got.log_bs == cand.log_bs
            assert got.log_am == cand.log_am
            assert got.rank == cand.rank

    def test_gamma_zero_on_decoded_world(self, small_world):
        for utt in small_world["eval_utts"]:
            nb = small_world["nbests"][utt.id]
            scores = {c.text: float(len(c.text)) for c in nb.candidates}
            out = rescoring.interpolate(nb, scores, 0.0)
            assert [c.text for c in out.candidates] == [
                c.text for c in nb.candidates
            ]

    def test_oracle_dominates_any_gamma(self, small_world):
        rng = np.random.default_rng(1)
        for utt in small_world["eval_utts"][:20]:
            nb = small_world["nbests"][utt.id]
            scores = {c.text: float(rng.normal()) for c in nb.candidates}
            oracle_wed = metrics.word_edit_distance(
                utt.text, rescoring.oracle_select(nb, utt.text).text
            )
            for gamma in (0.0, 0.1, 0.3, 0.5):
                top = rescoring.rescored_top(nb, scores, gamma)
                assert oracle_wed <= metrics.word_edit_distance(utt.text, top.text)
