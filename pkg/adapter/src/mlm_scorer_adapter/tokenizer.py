"""Word-level tokenizer owned by the adapter.

The scorer protocol ships plain utterance texts; packing them into model
inputs (special tokens, segments, separators) is the adapter's job.  The
vocabulary is whitespace words from a text corpus; unknown words map to
[UNK].  Stored as vocab.json inside the checkpoint directory.
"""

import json
import os

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)

VOCAB_FILE = "vocab.json"


class WordTokenizer:
    def __init__(self, vocab):
        self.vocab = dict(vocab)
        self.ids = {i: t for t, i in self.vocab.items()}
        for i, tok in enumerate(SPECIALS):
            if self.vocab.get(tok) != i:
                raise ValueError(f"special token {tok} must have id {i}")
        self.pad_id, self.unk_id, self.cls_id, self.sep_id, self.mask_id = range(5)

    def __len__(self):
        return len(self.vocab)

    @classmethod
    def build(cls, texts, min_count=1):
        counts = {}
        for text in texts:
            for word in text.split():
                counts[word] = counts.get(word, 0) + 1
        vocab = {tok: i for i, tok in enumerate(SPECIALS)}
        for word in sorted(counts):
            if counts[word] >= min_count and word not in vocab:
                vocab[word] = len(vocab)
        return cls(vocab)

    def save(self, directory):
        with open(os.path.join(directory, VOCAB_FILE), "w", encoding="utf-8") as fh:
            json.dump(self.vocab, fh, ensure_ascii=False, indent=0)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, VOCAB_FILE), encoding="utf-8") as fh:
            return cls(json.load(fh))

    def word_ids(self, text):
        return [self.vocab.get(w, self.unk_id) for w in text.split()]

    def encode_pair(self, context_texts, candidate_text, max_len, context_join):
        """[CLS] <context> [SEP] <candidate> [SEP] with segment ids.

        Overlong inputs are truncated from the left of the context, never
        the candidate.  Returns (ids, type_ids, truncated_token_count).
        """
        if context_join == "sep":
            ctx = []
            for i, text in enumerate(context_texts):
                if i:
                    ctx.append(self.sep_id)
                ctx.extend(self.word_ids(text))
        else:
            ctx = self.word_ids(" ".join(context_texts))
        cand = self.word_ids(candidate_text)

        budget = max_len - 3 - len(cand)  # [CLS], two [SEP]
        truncated = 0
        if budget < 0:
            # candidate alone overflows: drop all context, keep the
            # candidate's tail (the model cannot see more than max_len)
            truncated = len(ctx) + (-budget)
            ctx = []
            cand = cand[-(max_len - 3):]
        elif len(ctx) > budget:
            truncated = len(ctx) - budget
            ctx = ctx[truncated:]

        ids = [self.cls_id] + ctx + [self.sep_id] + cand + [self.sep_id]
        types = [0] * (2 + len(ctx)) + [1] * (len(cand) + 1)
        cand_positions = list(range(2 + len(ctx), 2 + len(ctx) + len(cand)))
        return ids, types, cand_positions, truncated
