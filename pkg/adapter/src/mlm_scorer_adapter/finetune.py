"""Fine-tuning on generated task records.

Consumes the pipeline's line-delimited JSON sample files: conversational
next-utterance triplets (kind "cnsp", fields texts/label) train the
next-sentence head; disambiguation records (kind "disambiguation", fields
context/candidate/label) train the binary classification head.  The whole
encoder is updated in both cases.  Checkpoints written by `finetune` load
back through ScoringModel.
"""

import json
import os
import sys

import torch

from .model import HEAD_FILE, ScoringModel
from .tokenizer import WordTokenizer


def read_task_records(path, kind):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("kind") != kind:
                continue
            records.append(obj)
    if not records:
        raise ValueError(f"{path}: no {kind!r} records")
    return records


def _warn_imbalance(labels):
    positives = sum(labels)
    if 0 < positives < len(labels):
        minority = min(positives, len(labels) - positives) / len(labels)
        if minority < 0.2:
            print(
                f"warning: label imbalance ({positives}/{len(labels)} positive)",
                file=sys.stderr,
            )


def _pad_batch(rows, pad_id):
    width = max(len(ids) for ids, _ in rows)
    input_ids = torch.full((len(rows), width), pad_id, dtype=torch.long)
    type_ids = torch.zeros((len(rows), width), dtype=torch.long)
    attention = torch.zeros((len(rows), width), dtype=torch.long)
    for r, (ids, types) in enumerate(rows):
        input_ids[r, : len(ids)] = torch.tensor(ids)
        type_ids[r, : len(types)] = torch.tensor(types)
        attention[r, : len(ids)] = 1
    return input_ids, type_ids, attention


def finetune(
    config,
    samples_path,
    objective,
    out_dir,
    epochs=3,
    learning_rate=5e-4,
    batch_size=8,
    seed=0,
):
    """Train on task records and write a reloadable checkpoint."""
    if objective not in ("cnsp", "disambiguation"):
        raise ValueError(f"unknown objective {objective!r}")
    scoring = ScoringModel(config)
    model, head, tokenizer = scoring.model, scoring.head, scoring.tokenizer
    torch.manual_seed(seed)

    examples = []
    if objective == "cnsp":
        for rec in read_task_records(samples_path, "cnsp"):
            first, second, third = rec["texts"]
            ids, types, _, _ = tokenizer.encode_pair(
                (first, second), third, scoring.max_seq_len, config.context_join
            )
            # next-sentence head convention: label 0 = continuation
            examples.append(((ids, types), 0 if rec["label"] == "positive" else 1))
    else:
        for rec in read_task_records(samples_path, "disambiguation"):
            ids, types, _, _ = tokenizer.encode_pair(
                tuple(rec["context"]),
                rec["candidate"],
                scoring.max_seq_len,
                config.context_join,
            )
            examples.append(((ids, types), 1 if rec["label"] == "positive" else 0))

    _warn_imbalance([1 - lab if objective == "cnsp" else lab for _, lab in examples])

    model.train()
    head.train()
    params = list(model.parameters()) + list(head.parameters())
    optimizer = torch.optim.AdamW(params, lr=learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()
    device = config.device

    for _ in range(epochs):
        for start in range(0, len(examples), batch_size):
            batch = examples[start : start + batch_size]
            rows = [row for row, _ in batch]
            labels = torch.tensor([lab for _, lab in batch], device=device)
            input_ids, type_ids, attention = _pad_batch(rows, tokenizer.pad_id)
            optimizer.zero_grad()
            if objective == "cnsp":
                logits = model(
                    input_ids=input_ids.to(device),
                    token_type_ids=type_ids.to(device),
                    attention_mask=attention.to(device),
                ).seq_relationship_logits
            else:
                pooled = model.bert(
                    input_ids=input_ids.to(device),
                    token_type_ids=type_ids.to(device),
                    attention_mask=attention.to(device),
                ).pooler_output
                logits = head(pooled)
            loss = loss_fn(logits, labels)
            loss.backward()
            optimizer.step()

    model.eval()
    head.eval()
    os.makedirs(out_dir, exist_ok=True)
    model.save_pretrained(out_dir)
    torch.save(head.state_dict(), os.path.join(out_dir, HEAD_FILE))
    tokenizer.save(out_dir)
    return out_dir
