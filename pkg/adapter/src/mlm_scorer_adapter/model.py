"""BERT-family scoring runtime.

A checkpoint directory holds a BertForPreTraining model (masked-LM and
next-sentence heads), a binary classification head over the pooled output
(classifier_head.pt), and the adapter's vocab.json.  `init_checkpoint`
creates a small randomly initialized checkpoint from corpus texts; any
directory in the same layout (e.g. a converted pretrained model) loads the
same way.
"""

import os

import torch
from transformers import BertConfig, BertForPreTraining
from transformers.utils import logging as hf_logging

from .tokenizer import WordTokenizer

hf_logging.set_verbosity_error()
hf_logging.disable_progress_bar()

HEAD_FILE = "classifier_head.pt"

MODES = ("mlm_pll", "nsp", "classifier")


def init_checkpoint(
    out_dir,
    texts,
    hidden_size=64,
    num_layers=2,
    num_heads=2,
    max_positions=128,
    seed=0,
):
    """Create a small randomly initialized checkpoint with a corpus vocab."""
    os.makedirs(out_dir, exist_ok=True)
    tokenizer = WordTokenizer.build(texts)
    config = BertConfig(
        vocab_size=len(tokenizer),
        hidden_size=hidden_size,
        num_hidden_layers=num_layers,
        num_attention_heads=num_heads,
        intermediate_size=hidden_size * 4,
        max_position_embeddings=max_positions,
        type_vocab_size=2,
        pad_token_id=tokenizer.pad_id,
    )
    torch.manual_seed(seed)
    model = BertForPreTraining(config)
    model.save_pretrained(out_dir)
    head = torch.nn.Linear(hidden_size, 2)
    torch.save(head.state_dict(), os.path.join(out_dir, HEAD_FILE))
    tokenizer.save(out_dir)
    return out_dir


class ScoringModel:
    """Deterministic scoring over the three protocol modes."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.tokenizer = WordTokenizer.load(config.model_path)
        self.model = BertForPreTraining.from_pretrained(config.model_path)
        self.model.to(config.device)
        self.model.eval()
        hidden = self.model.config.hidden_size
        self.head = torch.nn.Linear(hidden, 2)
        head_path = os.path.join(config.model_path, HEAD_FILE)
        if os.path.exists(head_path):
            self.head.load_state_dict(
                torch.load(head_path, map_location=config.device)
            )
        else:
            # keep classifier scoring available (and deterministic) even for
            # checkpoints that never saw classification fine-tuning
            torch.manual_seed(0)
            self.head = torch.nn.Linear(hidden, 2)
        self.head.to(config.device)
        self.head.eval()
        self.max_seq_len = min(
            config.max_seq_len, self.model.config.max_position_embeddings
        )
        self.truncated_inputs = 0

    # -- input packing -----------------------------------------------------

    def _encode(self, context, candidate):
        ids, types, cand_positions, truncated = self.tokenizer.encode_pair(
            context, candidate, self.max_seq_len, self.config.context_join
        )
        if truncated:
            self.truncated_inputs += 1
        return ids, types, cand_positions

    def _forward_rows(self, rows):
        """Batched forward over (ids, types) rows; yields model outputs."""
        device = self.config.device
        for start in range(0, len(rows), self.config.batch_size):
            chunk = rows[start : start + self.config.batch_size]
            width = max(len(ids) for ids, _ in chunk)
            input_ids = torch.full(
                (len(chunk), width), self.tokenizer.pad_id, dtype=torch.long
            )
            type_ids = torch.zeros((len(chunk), width), dtype=torch.long)
            attention = torch.zeros((len(chunk), width), dtype=torch.long)
            for r, (ids, types) in enumerate(chunk):
                input_ids[r, : len(ids)] = torch.tensor(ids)
                type_ids[r, : len(types)] = torch.tensor(types)
                attention[r, : len(ids)] = 1
            with torch.no_grad():
                yield self.model(
                    input_ids=input_ids.to(device),
                    token_type_ids=type_ids.to(device),
                    attention_mask=attention.to(device),
                ), chunk

    # -- scoring modes -------------------------------------------------------

    def mlm_pll(self, context, candidates):
        """Sum of single-mask log-probabilities over candidate positions."""
        rows = []
        plan = []  # (candidate index, masked position, original token id)
        scores = [0.0] * len(candidates)
        for ci, candidate in enumerate(candidates):
            ids, types, cand_positions = self._encode(context, candidate)
            for pos in cand_positions:
                masked = list(ids)
                target = masked[pos]
                masked[pos] = self.tokenizer.mask_id
                rows.append((masked, types))
                plan.append((ci, pos, target))
        done = 0
        for output, chunk in self._forward_rows(rows):
            log_probs = torch.log_softmax(output.prediction_logits, dim=-1)
            for r in range(len(chunk)):
                ci, pos, target = plan[done + r]
                scores[ci] += float(log_probs[r, pos, target])
            done += len(chunk)
        return scores

    def nsp(self, context, candidates):
        """Log-probability of the candidate continuing the context."""
        rows = [
            (lambda e: (e[0], e[1]))(self._encode(context, candidate))
            for candidate in candidates
        ]
        scores = []
        for output, chunk in self._forward_rows(rows):
            log_probs = torch.log_softmax(output.seq_relationship_logits, dim=-1)
            scores.extend(float(v) for v in log_probs[:, 0])
        return scores

    def classifier(self, context, candidates):
        """Log-probability of the positive class from the pooled output."""
        rows = [
            (lambda e: (e[0], e[1]))(self._encode(context, candidate))
            for candidate in candidates
        ]
        scores = []
        device = self.config.device
        for start in range(0, len(rows), self.config.batch_size):
            chunk = rows[start : start + self.config.batch_size]
            width = max(len(ids) for ids, _ in chunk)
            input_ids = torch.full(
                (len(chunk), width), self.tokenizer.pad_id, dtype=torch.long
            )
            type_ids = torch.zeros((len(chunk), width), dtype=torch.long)
            attention = torch.zeros((len(chunk), width), dtype=torch.long)
            for r, (ids, types) in enumerate(chunk):
                input_ids[r, : len(ids)] = torch.tensor(ids)
                type_ids[r, : len(types)] = torch.tensor(types)
                attention[r, : len(ids)] = 1
            with torch.no_grad():
                pooled = self.model.bert(
                    input_ids=input_ids.to(device),
                    token_type_ids=type_ids.to(device),
                    attention_mask=attention.to(device),
                ).pooler_output
                log_probs = torch.log_softmax(self.head(pooled), dim=-1)
            scores.extend(float(v) for v in log_probs[:, 1])
        return scores

    def score(self, mode, context, candidates):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        context = tuple(context)
        candidates = list(candidates)
        return getattr(self, "mlm_pll" if mode == "mlm_pll" else mode)(
            context, candidates
        )
