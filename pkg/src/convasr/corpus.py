"""Conversation/utterance data model, corpus ingestion, and the synthetic
logit harness.

Corpus files hold one utterance per line with fields (conversation_id, index,
split, speaker, text) in that order; ``.tsv`` files are tab-separated with an
empty speaker field for "no speaker", ``.jsonl`` files carry one JSON object
per line.  Splits are assigned per conversation: every record of a
conversation must name the same split.

Logit matrices are stored in a small binary format: the magic string
``CTCL1``, uint32 T and K, K length-prefixed UTF-8 alphabet tokens, then
T*K little-endian float32 values in row-major order.  By convention the CTC
blank symbol is the first alphabet entry.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AlphabetError, CorpusFormatError, IntegrityError

SPLITS = ("train", "eval", "test")

#: Ground-truth marker for unintelligible speech.  A regular vocabulary word,
#: not the CTC blank.
UNINTELLIGIBLE_TOKEN = "<blank>"

LOGIT_MAGIC = b"CTCL1"


@dataclass(frozen=True)
class Utterance:
    id: str
    conversation_id: str
    index: int
    text: str
    speaker: str | None = None

    @property
    def tokens(self):
        return tuple(self.text.split())


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise IntegrityError(f"unknown split {self.split!r}")
        for pos, utt in enumerate(self.utterances):
            if utt.index != pos:
                raise IntegrityError(
                    f"conversation {self.id}: utterance indices must be "
                    f"contiguous from 0, found {utt.index} at position {pos}"
                )

    def __len__(self):
        return len(self.utterances)


@dataclass(frozen=True)
class ContextWindow:
    """Up to k preceding utterance texts, oldest first."""

    utterances: tuple
    k: int


@dataclass
class LogitMatrix:
    """Per-frame token probabilities; rows sum to one, blank first."""

    utterance_id: str
    frames: np.ndarray
    alphabet: tuple

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.alphabet = tuple(self.alphabet)
        T, K = self.frames.shape if self.frames.ndim == 2 else (0, 0)
        if T < 1 or K < 2:
            raise IntegrityError("logit matrix needs T >= 1 frames and K >= 2 tokens")
        if K != len(self.alphabet):
            raise IntegrityError("alphabet size does not match matrix width")
        if np.any(self.frames < 0) or np.any(self.frames > 1):
            raise IntegrityError("probabilities must lie in [0, 1]")
        rows = self.frames.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-5):
            bad = int(np.argmax(np.abs(rows - 1.0)))
            raise IntegrityError(f"frame {bad} sums to {rows[bad]:.7f}, not 1")

    @property
    def num_frames(self):
        return self.frames.shape[0]


def utterance_file_id(conversation_id, index):
    """Filesystem-safe utterance id used for logit files and n-best records."""
    return f"{conversation_id}_{index:04d}"


# ----------------------------------------------------------------------
# corpus files
# ----------------------------------------------------------------------


def _record_from_tsv(line, lineno):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise CorpusFormatError(f"line {lineno}: expected 5 tab-separated fields")
    conv, idx, split, speaker, text = parts
    return conv, idx, split, speaker or None, text


def _record_from_jsonl(line, lineno):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    try:
        return (
            obj["conversation_id"],
            obj["index"],
            obj["split"],
            obj.get("speaker"),
            obj["text"],
        )
    except KeyError as exc:
        raise CorpusFormatError(f"line {lineno}: missing field {exc.args[0]}") from exc


def load_corpus(path, split_filter=None):
    """Read conversations from a ``.tsv`` or ``.jsonl`` corpus file."""
    path = str(path)
    if path.endswith(".jsonl"):
        parse = _record_from_jsonl
    elif path.endswith(".tsv"):
        parse = _record_from_tsv
    else:
        raise CorpusFormatError(f"unknown corpus extension for {path}")
    if split_filter is not None and split_filter not in SPLITS:
        raise CorpusFormatError(f"unknown split filter {split_filter!r}")

    by_conv = {}
    conv_split = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            conv, idx, split, speaker, text = parse(line, lineno)
            try:
                idx = int(idx)
            except (TypeError, ValueError):
                raise CorpusFormatError(f"line {lineno}: index {idx!r} not an integer")
            if idx < 0:
                raise CorpusFormatError(f"line {lineno}: negative index {idx}")
            if split not in SPLITS:
                raise CorpusFormatError(f"line {lineno}: unknown split {split!r}")
            if not isinstance(text, str):
                raise CorpusFormatError(f"line {lineno}: text is not a string")
            if conv in conv_split and conv_split[conv] != split:
                raise IntegrityError(
                    f"line {lineno}: conversation {conv} listed in both "
                    f"{conv_split[conv]!r} and {split!r}"
                )
            conv_split[conv] = split
            if idx in by_conv.setdefault(conv, {}):
                raise IntegrityError(
                    f"line {lineno}: duplicate utterance ({conv}, {idx})"
                )
            by_conv[conv][idx] = Utterance(
                id=utterance_file_id(conv, idx),
                conversation_id=conv,
                index=idx,
                text=" ".join(text.split()),
                speaker=speaker,
            )

    conversations = []
    for conv in by_conv:
        split = conv_split[conv]
        if split_filter is not None and split != split_filter:
            continue
        utts = tuple(by_conv[conv][i] for i in sorted(by_conv[conv]))
        conversations.append(Conversation(id=conv, utterances=utts, split=split))
    return conversations


def save_corpus(conversations, path):
    """Write conversations back out in the format selected by the extension."""
    path = str(path)
    jsonl = path.endswith(".jsonl")
    if not jsonl and not path.endswith(".tsv"):
        raise CorpusFormatError(f"unknown corpus extension for {path}")
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            for utt in conv.utterances:
                if jsonl:
                    fh.write(
                        json.dumps(
                            {
                                "conversation_id": conv.id,
                                "index": utt.index,
                                "split": conv.split,
                                "speaker": utt.speaker,
                                "text": utt.text,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
                else:
                    fh.write(
                        f"{conv.id}\t{utt.index}\t{conv.split}\t"
                        f"{utt.speaker or ''}\t{utt.text}\n"
                    )


def context_window(conversation, index, k, use_decoded=None):
    """The up-to-k utterance texts preceding `index` within one conversation.

    By default the ground-truth transcripts are used; pass `use_decoded`, a
    mapping from utterance id to decoded text, to build inference-time
    context from previous outputs instead.
    """
    if k < 0:
        raise IntegrityError("context length k must be >= 0")
    if not 0 <= index < len(conversation):
        raise IntegrityError(
            f"index {index} out of range for conversation {conversation.id}"
        )
    lo = max(0, index - k)
    preceding = conversation.utterances[lo:index]
    if use_decoded is None:
        texts = tuple(u.text for u in preceding)
    else:
        texts = tuple(use_decoded.get(u.id, u.text) for u in preceding)
    return ContextWindow(utterances=texts, k=k)


# ----------------------------------------------------------------------
# vocabulary files
# ----------------------------------------------------------------------


def load_vocabulary(path):
    """One word per line, UTF-8; blank lines ignored."""
    words = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.strip()
            if word:
                words.append(word)
    return words


def save_vocabulary(words, path):
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(set(words)):
            fh.write(word + "\n")


# ----------------------------------------------------------------------
# logit files
# ----------------------------------------------------------------------


def write_logits(matrix, path):
    with open(path, "wb") as fh:
        fh.write(LOGIT_MAGIC)
        T, K = matrix.frames.shape
        fh.write(struct.pack("<II", T, K))
        for token in matrix.alphabet:
            raw = token.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(matrix.frames.astype("<f4").tobytes(order="C"))


def read_logits(path, utterance_id=None):
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != LOGIT_MAGIC:
            raise CorpusFormatError(f"{path}: bad magic {magic!r}")
        T, K = struct.unpack("<II", fh.read(8))
        alphabet = []
        for _ in range(K):
            (n,) = struct.unpack("<H", fh.read(2))
            alphabet.append(fh.read(n).decode("utf-8"))
        payload = fh.read(4 * T * K)
        if len(payload) != 4 * T * K:
            raise CorpusFormatError(f"{path}: truncated payload")
        frames = np.frombuffer(payload, dtype="<f4").reshape(T, K).astype(np.float64)
    if utterance_id is None:
        utterance_id = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return LogitMatrix(utterance_id=utterance_id, frames=frames, alphabet=alphabet)


# ----------------------------------------------------------------------
# synthetic logits
# ----------------------------------------------------------------------


def synth_logits(text, alphabet, noise, seed, utterance_id="synthetic"):
    """Deterministic synthetic acoustic output for a transcript.

    At noise=0 the frames are one-hot and greedy decoding reproduces `text`
    exactly.  With noise > 0, character emissions are randomly corrupted
    (substitution ambiguity, deletion pressure, spurious insertions) and a
    small uniform background keeps every entry positive.
    """
    alphabet = tuple(alphabet)
    if not 0 <= noise < 1:
        raise ValueError("noise must lie in [0, 1)")
    index = {tok: i for i, tok in enumerate(alphabet)}
    blank = 0
    chars = []
    for ch in " ".join(str(text).split()):
        if ch not in index:
            raise AlphabetError(f"character {ch!r} not in alphabet")
        chars.append(index[ch])

    K = len(alphabet)
    rng = np.random.default_rng(seed)
    rows = []

    def one_hot(i, mass=1.0, other=None, other_mass=0.0):
        row = np.zeros(K)
        row[i] = mass
        if other is not None:
            row[other] += other_mass
        return row

    rows.append(one_hot(blank))
    for ci in chars:
        emit = [one_hot(ci), one_hot(ci)]
        sep = one_hot(blank)
        if noise > 0 and rng.random() < noise:
            kind = rng.random()
            others = [i for i in range(1, K) if i != ci]
            if kind < 0.5 and others:
                # substitution: both emission frames lean toward a wrong
                # character, so the acoustic prefers the confusion
                wrong = int(rng.choice(others))
                m = rng.uniform(0.55, 0.8)
                emit[0] = one_hot(wrong, m, ci, 1.0 - m)
                emit[1] = one_hot(wrong, m, ci, 1.0 - m)
            elif kind < 0.75:
                # deletion pressure: blank soaks both emission frames
                m = rng.uniform(0.5, 0.75)
                emit[0] = one_hot(blank, m, ci, 1.0 - m)
                emit[1] = one_hot(blank, m, ci, 1.0 - m)
            elif others:
                # spurious insertion in the separator frame
                wrong = int(rng.choice(others))
                m = rng.uniform(0.5, 0.7)
                sep = one_hot(wrong, m, blank, 1.0 - m)
        rows.extend(emit)
        rows.append(sep)
    rows.append(one_hot(blank))

    frames = np.stack(rows)
    if noise > 0:
        bg = 0.01
        frames = (1.0 - bg) * frames + bg / K
    frames /= frames.sum(axis=1, keepdims=True)
    return LogitMatrix(utterance_id=utterance_id, frames=frames, alphabet=alphabet)
