"""Adapter conformance: protocol behavior, PLL additivity, fine-tuning."""

import json
import math
import subprocess
import sys

import pytest
import torch
from transformers import BertForPreTraining

from mlm_scorer_adapter.config import AdapterConfig
from mlm_scorer_adapter.finetune import finetune, read_task_records
from mlm_scorer_adapter.model import ScoringModel, init_checkpoint
from mlm_scorer_adapter.server import handle_line
from mlm_scorer_adapter.tokenizer import WordTokenizer

TEXTS = [
    "cab de bad egg",
    "dab de bed",
    "gab de face fee",
    "hag de fade add",
    "bag de cage ebb",
    "fad de cafe",
    "gad de bead edge",
    "had de head dead",
]


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    init_checkpoint(str(out), TEXTS, seed=0)
    return str(out)


@pytest.fixture(scope="module")
def model(checkpoint):
    return ScoringModel(AdapterConfig(model_path=checkpoint).validate())


def make_requests(n):
    requests = []
    modes = ("mlm_pll", "nsp", "classifier")
    for i in range(n):
        context = TEXTS[i % 3 : i % 3 + (i % 3)]
        candidates = [TEXTS[(i + j) % len(TEXTS)] for j in range(1 + i % 4)]
        requests.append(
            {
                "request_id": i,
                "mode": modes[i % 3],
                "context": context,
                "candidates": candidates,
            }
        )
    return requests


class TestProtocolConformance:
    def test_replay_of_120_recorded_requests(self, model, tmp_path):
        # record 120 request lines to a log, then answer the recorded log
        # twice: aligned, finite, deterministic
        requests = make_requests(120)
        log = tmp_path / "requests.log"
        log.write_text("".join(json.dumps(r) + "\n" for r in requests))

        def run():
            out = []
            with open(log, encoding="utf-8") as fh:
                for line in fh:
                    req = json.loads(line)
                    resp = json.loads(handle_line(model, line))
                    assert resp["request_id"] == req["request_id"]
                    assert len(resp["scores"]) == len(req["candidates"])
                    assert all(math.isfinite(s) for s in resp["scores"])
                    out.append(tuple(resp["scores"]))
            return out

        first = run()
        second = run()
        assert len(first) == 120
        assert first == second

    def test_subprocess_stdio_server(self, checkpoint):
        requests = make_requests(12)
        payload = "".join(json.dumps(r) + "\n" for r in requests)
        argv = [
            sys.executable,
            "-m",
            "mlm_scorer_adapter.cli",
            "serve",
            "--model",
            checkpoint,
        ]
        result = subprocess.run(
            argv, input=payload, capture_output=True, text=True, timeout=300
        )
        assert result.returncode == 0, result.stderr
        lines = [l for l in result.stdout.splitlines() if l.strip()]
        assert len(lines) == len(requests)
        for req, line in zip(requests, lines):
            resp = json.loads(line)
            assert resp["request_id"] == req["request_id"]
            assert len(resp["scores"]) == len(req["candidates"])

    def test_identical_candidates_identical_scores(self, model):
        resp = json.loads(
            handle_line(
                model,
                json.dumps(
                    {
                        "request_id": 1,
                        "mode": "mlm_pll",
                        "context": ["cab de bad"],
                        "candidates": ["dab de bed", "egg", "dab de bed"],
                    }
                ),
            )
        )
        assert resp["scores"][0] == resp["scores"][2]

    def test_empty_candidates_rejected(self, model):
        with pytest.raises(ValueError):
            handle_line(
                model,
                json.dumps(
                    {"request_id": 1, "mode": "nsp", "context": [], "candidates": []}
                ),
            )


def manual_single_mask_pll(checkpoint, config, context, candidate):
    """Independent oracle: one forward pass per masked candidate position."""
    tokenizer = WordTokenizer.load(checkpoint)
    bert = BertForPreTraining.from_pretrained(checkpoint)
    bert.eval()
    ids, types, cand_positions, _ = tokenizer.encode_pair(
        context, candidate, config.max_seq_len, config.context_join
    )
    total = 0.0
    for pos in cand_positions:
        masked = list(ids)
        target = masked[pos]
        masked[pos] = tokenizer.mask_id
        with torch.no_grad():
            out = bert(
                input_ids=torch.tensor([masked]),
                token_type_ids=torch.tensor([types]),
            )
            log_probs = torch.log_softmax(out.prediction_logits, dim=-1)
        total += float(log_probs[0, pos, target])
    return total


class TestPllAdditivity:
    def test_matches_single_mask_oracle(self, checkpoint, model):
        context = ("cab de bad", "dab de bed")
        for candidate in ("gab de face fee", "egg", "bad bad"):
            expect = manual_single_mask_pll(
                checkpoint, model.config, context, candidate
            )
            got = model.mlm_pll(context, [candidate])[0]
            assert abs(got - expect) < 1e-4, candidate

    def test_one_token_candidate_is_single_pass(self, checkpoint, model):
        expect = manual_single_mask_pll(checkpoint, model.config, (), "egg")
        got = model.mlm_pll((), ["egg"])[0]
        assert abs(got - expect) < 1e-4

    def test_two_token_candidate_sums_two_passes(self, checkpoint, model):
        expect = manual_single_mask_pll(checkpoint, model.config, (), "bad egg")
        got = model.mlm_pll((), ["bad egg"])[0]
        assert abs(got - expect) < 1e-4

    def test_empty_candidate_scores_zero(self, model):
        assert model.mlm_pll((), [""])[0] == 0.0

    def test_batching_invariance(self, checkpoint):
        wide = ScoringModel(
            AdapterConfig(model_path=checkpoint, batch_size=768).validate()
        )
        narrow = ScoringModel(
            AdapterConfig(model_path=checkpoint, batch_size=2).validate()
        )
        context = ("cab de bad",)
        candidates = ["dab de bed", "gab de face fee", "egg add ebb"]
        for a, b in zip(
            wide.mlm_pll(context, candidates), narrow.mlm_pll(context, candidates)
        ):
            assert abs(a - b) < 1e-4


class TestTruncation:
    def test_context_truncated_candidate_kept(self, checkpoint):
        config = AdapterConfig(model_path=checkpoint, max_seq_len=12).validate()
        model = ScoringModel(config)
        long_context = tuple(["cab de bad egg"] * 6)
        candidate = "dab de bed"
        ids, types, cand_positions, truncated = model.tokenizer.encode_pair(
            long_context, candidate, model.max_seq_len, config.context_join
        )
        assert truncated > 0
        assert len(ids) <= 12
        # candidate tokens survive in full
        cand_ids = [ids[p] for p in cand_positions]
        assert cand_ids == model.tokenizer.word_ids(candidate)
        before = model.truncated_inputs
        model.score("mlm_pll", long_context, [candidate])
        assert model.truncated_inputs > before


class TestClassifierHead:
    def test_probabilities_in_unit_interval(self, model):
        scores = model.classifier((), TEXTS[:4])
        for s in scores:
            assert 0.0 < math.exp(s) < 1.0


def write_disambiguation_samples(path, n):
    rng_texts = TEXTS * 4
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            positive = i % 2 == 0
            fh.write(
                json.dumps(
                    {
                        "kind": "disambiguation",
                        "label": "positive" if positive else "negative",
                        "context": [rng_texts[i]],
                        "candidate": rng_texts[i + 1] if positive else "bad bad bad",
                        "utterance_id": f"u{i}",
                        "wed": 0 if positive else 3,
                    }
                )
                + "\n"
            )


def write_cnsp_samples(path, n):
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            positive = i % 2 == 0
            fh.write(
                json.dumps(
                    {
                        "kind": "cnsp",
                        "label": "positive" if positive else "negative",
                        "texts": [
                            TEXTS[i % 4],
                            TEXTS[(i + 1) % 4],
                            TEXTS[(i + 2) % 4] if positive else "egg egg egg",
                        ],
                        "source_conversation": f"c{i}",
                        "negative_source": None if positive else "cX",
                    }
                )
                + "\n"
            )


class TestFinetune:
    def test_ten_sample_smoke_checkpoint_reloads(self, checkpoint, tmp_path):
        samples = tmp_path / "disamb.jsonl"
        write_disambiguation_samples(samples, 10)
        out = tmp_path / "tuned"
        config = AdapterConfig(model_path=checkpoint).validate()
        finetune(config, str(samples), "disambiguation", str(out), epochs=1)
        tuned = ScoringModel(AdapterConfig(model_path=str(out)).validate())
        scores = tuned.score("classifier", ("cab de bad",), ["dab de bed", "egg"])
        assert all(math.isfinite(s) for s in scores)

    def test_cnsp_smoke(self, checkpoint, tmp_path):
        samples = tmp_path / "cnsp.jsonl"
        write_cnsp_samples(samples, 10)
        out = tmp_path / "tuned_cnsp"
        config = AdapterConfig(model_path=checkpoint).validate()
        finetune(config, str(samples), "cnsp", str(out), epochs=1)
        tuned = ScoringModel(AdapterConfig(model_path=str(out)).validate())
        scores = tuned.score("nsp", ("cab de bad", "dab de bed"), ["gab de face"])
        assert math.isfinite(scores[0])

    def test_finetuning_separates_training_labels(self, checkpoint, tmp_path):
        # before/after comparison on the training pattern (non-gating in
        # spirit; the tiny random model reliably fits 10 samples)
        samples = tmp_path / "d2.jsonl"
        write_disambiguation_samples(samples, 10)
        out = tmp_path / "tuned2"
        config = AdapterConfig(model_path=checkpoint).validate()

        def pairwise_accuracy(m):
            correct = 0
            for i in range(0, 10, 2):
                pos = TEXTS[(i + 1) % len(TEXTS)]
                scores = m.score(
                    "classifier", (TEXTS[i % len(TEXTS)],), [pos, "bad bad bad"]
                )
                correct += scores[0] > scores[1]
            return correct / 5

        before = pairwise_accuracy(ScoringModel(config))
        finetune(config, str(samples), "disambiguation", str(out), epochs=12)
        after = pairwise_accuracy(
            ScoringModel(AdapterConfig(model_path=str(out)).validate())
        )
        print(f"pairwise accuracy before={before} after={after}")
        assert after >= before

    def test_missing_kind_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValueError):
            read_task_records(str(path), "cnsp")
