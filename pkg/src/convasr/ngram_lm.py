"""Kneser-Ney smoothed back-off n-gram language model.

Estimation is interpolated Kneser-Ney with one count-of-count-derived
discount per order, D = n1 / (n1 + 2*n2), falling back to a fixed 0.75 when
the count-of-count statistics are degenerate (n1 or n2 zero at that order).
Every utterance is an independent document: sentences are padded with
sentence-start/end markers and no n-gram crosses a sentence boundary.
Pruning removes low-count n-grams of order >= 2 from the raw count tables
before any smoothing mass is assigned.

Log-probabilities are stored in base 10 (the ARPA convention), quantized to
7 significant decimal digits so that ARPA round trips are lossless; the
decoder-facing tables convert to natural log.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ArpaFormatError, ConfigError, IntegrityError, TrainingError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

LN10 = math.log(10.0)


def _q7(x):
    # quantize to 7 significant decimal digits (ARPA text precision)
    return float(f"{x:.7g}")


@dataclass
class PruneConfig:
    """Minimum raw count per order; grams below the threshold are dropped.

    The unigram threshold must be 1 (the vocabulary is never pruned).
    """

    min_count_per_order: list

    @classmethod
    def default(cls, order):
        """Keep all unigrams, drop singleton n-grams of order 2 and above."""
        return cls([1] + [2] * (order - 1))

    @classmethod
    def none(cls, order):
        return cls([1] * order)

    def validate(self, order):
        counts = list(self.min_count_per_order)
        if len(counts) != order:
            raise ConfigError(
                f"prune config has {len(counts)} thresholds for order {order}"
            )
        if any(c < 1 for c in counts):
            raise ConfigError("prune thresholds must be >= 1")
        if counts[0] != 1:
            raise ConfigError("unigram threshold must be 1; vocabulary is kept")
        return counts


@dataclass
class NGramModel:
    """Back-off model: per-order tables of (log10 prob, log10 backoff)."""

    order: int
    vocab: dict  # token -> id
    id_to_token: list
    tables: list  # tables[m-1]: {gram ids tuple: [logp10, bow10 | None]}
    _decode_tables: object = field(default=None, repr=False, compare=False)

    # -- queries ---------------------------------------------------------

    def _id(self, token):
        return self.vocab.get(token, self.vocab[UNK])

    def log_prob(self, word, history=()):
        """log10 P(word | history); OOV words map to the unknown marker."""
        if isinstance(history, str):
            history = history.split()
        hids = tuple(self._id(t) for t in history)
        if self.order > 1:
            hids = hids[-(self.order - 1):]
        else:
            hids = ()
        return self._score(hids, self._id(word))

    def _score(self, h, w):
        acc = 0.0
        while True:
            entry = self.tables[len(h)].get(h + (w,))
            if entry is not None:
                return acc + entry[0]
            if not h:
                return acc + self.tables[0][(self.vocab[UNK],)][0]
            hentry = self.tables[len(h) - 1].get(h)
            if hentry is not None and hentry[1] is not None:
                acc += hentry[1]
            h = h[1:]

    def sentence_log_prob(self, sentence):
        """log10 probability of a complete sentence with start/end padding."""
        if isinstance(sentence, str):
            sentence = sentence.split()
        total = 0.0
        history = [BOS]
        for token in list(sentence) + [EOS]:
            total += self.log_prob(token, history)
            history.append(token)
        return total

    def ngram_count(self, order):
        return len(self.tables[order - 1])

    def vocabulary(self):
        return tuple(self.id_to_token)


def train(sentences, order, prune=None):
    """Estimate an interpolated Kneser-Ney model from tokenized sentences."""
    if not 1 <= order <= 6:
        raise ConfigError(f"order must be in [1, 6], got {order}")
    sents = []
    for s in sentences:
        toks = s.split() if isinstance(s, str) else list(s)
        if toks:
            sents.append(toks)
    if not sents:
        raise TrainingError("no non-empty sentences to train on")
    for toks in sents:
        for t in toks:
            if t in (BOS, EOS, UNK):
                raise TrainingError(f"corpus contains reserved token {t!r}")

    prune = prune if prune is not None else PruneConfig.default(order)
    min_counts = prune.validate(order)

    words = sorted({t for toks in sents for t in toks})
    id_to_token = [UNK, BOS, EOS] + words
    vocab = {t: i for i, t in enumerate(id_to_token)}
    unk_id, bos_id, eos_id = vocab[UNK], vocab[BOS], vocab[EOS]

    # raw sliding-window counts per order over padded sentences
    raw = [Counter() for _ in range(order)]
    for toks in sents:
        ids = [bos_id] + [vocab[t] for t in toks] + [eos_id]
        for m in range(1, order + 1):
            for i in range(len(ids) - m + 1):
                raw[m - 1][tuple(ids[i : i + m])] += 1

    # prune raw counts (order >= 2), then restore prefix/suffix closure
    surv = [dict(raw[0])]
    for m in range(2, order + 1):
        thr = min_counts[m - 1]
        surv.append({g: c for g, c in raw[m - 1].items() if c >= thr})
    for m in range(order, 2, -1):
        lower = surv[m - 2]
        for g in surv[m - 1]:
            for closed in (g[:-1], g[1:]):
                if closed not in lower:
                    lower[closed] = raw[m - 2][closed]

    # per-order counts entering the discounting: raw at the highest order,
    # continuation counts below (grams starting with <s> keep raw counts)
    used = [dict() for _ in range(order)]
    used[order - 1] = dict(surv[order - 1])
    for m in range(order - 1, 0, -1):
        cont = Counter()
        for g in surv[m]:
            cont[g[1:]] += 1
        table = {}
        grams = surv[m - 1] if m > 1 else {(w,): c for (w,), c in raw[0].items()}
        for g in grams:
            if g[0] == bos_id:
                table[g] = surv[m - 1].get(g, raw[m - 1].get(g, 0)) if m > 1 else 0
            else:
                table[g] = cont.get(g, 0)
        used[m - 1] = table
    # order-1 model (or fully pruned higher orders): fall back to raw counts
    if order == 1 or sum(c for g, c in used[0].items() if g[0] != bos_id) == 0:
        used[0] = {g: (0 if g[0] == bos_id else c) for g, c in raw[0].items()}
    for wid in range(len(id_to_token)):
        used[0].setdefault((wid,), 0)

    def discount(counts):
        n1 = sum(1 for c in counts if c == 1)
        n2 = sum(1 for c in counts if c == 2)
        if n1 == 0 or n2 == 0:
            return 0.75
        return n1 / (n1 + 2 * n2)

    tables = [dict() for _ in range(order)]

    # unigrams: interpolate with the uniform distribution over predictable
    # tokens (everything except <s>)
    d1 = discount([c for g, c in used[0].items() if g[0] != bos_id and c > 0])
    den1 = sum(c for g, c in used[0].items() if g[0] != bos_id)
    npos1 = sum(1 for g, c in used[0].items() if g[0] != bos_id and c > 0)
    v_pred = len(id_to_token) - 1
    uni_prob = {}
    for g, c in sorted(used[0].items()):
        if g[0] == bos_id:
            uni_prob[g] = 1e-99
            continue
        p = max(c - d1, 0.0) / den1 + (d1 * npos1 / den1) * (1.0 / v_pred)
        uni_prob[g] = p
    lower_prob = uni_prob
    for g, p in uni_prob.items():
        tables[0][g] = [_q7(math.log10(p)), 0.0 if order > 1 else None]

    for m in range(2, order + 1):
        dm = discount([c for c in used[m - 1].values() if c > 0])
        groups = defaultdict(list)
        for g in surv[m - 1]:
            groups[g[:-1]].append(g)
        this_prob = {}
        for h in sorted(groups):
            grams = groups[h]
            den = sum(used[m - 1][g] for g in grams)
            if den > 0:
                npos = sum(1 for g in grams if used[m - 1][g] > 0)
                lam = dm * npos / den
                for g in grams:
                    c = used[m - 1][g]
                    p = max(c - dm, 0.0) / den + lam * lower_prob[g[1:]]
                    this_prob[g] = p
            else:
                lam = 1.0
                for g in grams:
                    this_prob[g] = lower_prob[g[1:]]
            tables[m - 2][h][1] = _q7(math.log10(lam))
        bow = 0.0 if m < order else None
        for g in sorted(this_prob):
            tables[m - 1][g] = [_q7(math.log10(this_prob[g])), bow]
        lower_prob = this_prob

    return NGramModel(
        order=order, vocab=vocab, id_to_token=id_to_token, tables=tables
    )


def train_from_texts(texts, order, prune=None):
    return train([t.split() for t in texts], order, prune)


# ----------------------------------------------------------------------
# ARPA serialization
# ----------------------------------------------------------------------


def save_arpa(model, path):
    """Write the model in ARPA text format (7 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        for m in range(1, model.order + 1):
            fh.write(f"ngram {m}={len(model.tables[m - 1])}\n")
        for m in range(1, model.order + 1):
            fh.write(f"\n\\{m}-grams:\n")
            for gram in sorted(model.tables[m - 1]):
                logp, bow = model.tables[m - 1][gram]
                toks = " ".join(model.id_to_token[i] for i in gram)
                if bow is None:
                    fh.write(f"{logp:.7g}\t{toks}\n")
                else:
                    fh.write(f"{logp:.7g}\t{toks}\t{bow:.7g}\n")
        fh.write("\n\\end\\\n")


def load_arpa(path):
    """Parse an ARPA file into an NGramModel."""
    declared = {}
    sections = {}
    state = "preamble"
    current = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if state == "preamble":
                if text == "\\data\\":
                    state = "data"
                continue
            if state == "data":
                if not text:
                    continue
                if text.startswith("ngram "):
                    try:
                        m, count = text[6:].split("=")
                        declared[int(m)] = int(count)
                    except ValueError:
                        raise ArpaFormatError(f"line {lineno}: bad ngram declaration")
                    continue
                state = "grams"
            if state == "grams":
                if not text:
                    continue
                if text == "\\end\\":
                    state = "done"
                    continue
                if text.startswith("\\") and text.endswith("-grams:"):
                    try:
                        current = int(text[1:-7])
                    except ValueError:
                        raise ArpaFormatError(f"line {lineno}: bad section header")
                    if current not in declared:
                        raise ArpaFormatError(
                            f"line {lineno}: section {current} not declared"
                        )
                    sections[current] = []
                    continue
                if current is None:
                    raise ArpaFormatError(f"line {lineno}: entry outside a section")
                fields = text.split()
                if len(fields) == current + 1:
                    logp, toks, bow = fields[0], fields[1:], None
                elif len(fields) == current + 2:
                    logp, toks, bow = fields[0], fields[1:-1], fields[-1]
                else:
                    raise ArpaFormatError(
                        f"line {lineno}: expected a {current}-gram entry"
                    )
                toks = tuple(toks)
                try:
                    logp = float(logp)
                    bow = float(bow) if bow is not None else None
                except ValueError:
                    raise ArpaFormatError(f"line {lineno}: bad numeric field")
                sections[current].append((toks, logp, bow))
    if state != "done":
        raise ArpaFormatError("missing \\data\\ or \\end\\ marker")
    if not sections or 1 not in sections:
        raise ArpaFormatError("no unigram section")
    order = max(sections)
    if sorted(sections) != list(range(1, order + 1)):
        raise ArpaFormatError("non-contiguous n-gram sections")
    for m, count in declared.items():
        if len(sections.get(m, ())) != count:
            raise ArpaFormatError(
                f"declared {count} {m}-grams, found {len(sections.get(m, ()))}"
            )

    id_to_token = []
    vocab = {}
    for toks, _, _ in sections[1]:
        tok = toks[0]
        if tok in vocab:
            raise ArpaFormatError(f"duplicate unigram {tok!r}")
        vocab[tok] = len(id_to_token)
        id_to_token.append(tok)
    for marker in (UNK, BOS, EOS):
        if marker not in vocab:
            raise ArpaFormatError(f"missing {marker} unigram")

    tables = [dict() for _ in range(order)]
    for m in range(1, order + 1):
        for toks, logp, bow in sections.get(m, ()):
            try:
                gram = tuple(vocab[t] for t in toks)
            except KeyError as exc:
                raise ArpaFormatError(f"{m}-gram uses unknown token {exc.args[0]!r}")
            if gram in tables[m - 1]:
                raise ArpaFormatError(f"duplicate {m}-gram {' '.join(toks)}")
            if m > 1 and gram[:-1] not in tables[m - 2]:
                raise ArpaFormatError(
                    f"{m}-gram {' '.join(toks)} lacks its history at order {m - 1}"
                )
            tables[m - 1][gram] = [logp, bow]
    return NGramModel(order=order, vocab=vocab, id_to_token=id_to_token, tables=tables)


# ----------------------------------------------------------------------
# decoder-facing tables
# ----------------------------------------------------------------------


@dataclass
class DecodeTables:
    """Flat back-off automaton in natural log, consumed by the beam kernel.

    States are stored grams of order < n (state 0 = empty context); entries
    are stored grams keyed by (context state, word id) with per-state spans
    over word-sorted arrays.
    """

    word_ids: dict
    unk_id: int
    bos_id: int
    eos_id: int
    init_state: int
    ent_word: np.ndarray
    ent_prob: np.ndarray
    ent_ext: np.ndarray
    st_lo: np.ndarray
    st_hi: np.ndarray
    st_bow: np.ndarray
    st_back: np.ndarray

    def word_id(self, token):
        return self.word_ids.get(token, self.unk_id)


def compile_decode_tables(model):
    """Build (and cache) the flat decode tables for a trained model."""
    if model._decode_tables is not None:
        return model._decode_tables

    order = model.order
    word_ids = dict(model.vocab)

    stored = [set(t) for t in model.tables]

    def longest_stored_suffix(gram):
        g = gram[-(order - 1):] if order > 1 else ()
        while g and g not in stored[len(g) - 1]:
            g = g[1:]
        return g

    states = {(): 0}
    state_gram = [()]
    for m in range(1, order):
        for gram in sorted(model.tables[m - 1]):
            states[gram] = len(state_gram)
            state_gram.append(gram)

    n_states = len(state_gram)
    st_bow = np.zeros(n_states, dtype=np.float64)
    st_back = np.zeros(n_states, dtype=np.int64)
    for s, gram in enumerate(state_gram):
        if not gram:
            continue
        bow = model.tables[len(gram) - 1][gram][1]
        st_bow[s] = (bow or 0.0) * LN10
        st_back[s] = states[longest_stored_suffix(gram[1:])]

    entries = []
    for m in range(1, order + 1):
        for gram, (logp, _) in model.tables[m - 1].items():
            ctx = states.get(gram[:-1])
            if ctx is None:
                # ARPA guarantees the history exists; stay defensive for
                # foreign files where it may exceed the state orders
                continue
            ext = states[longest_stored_suffix(gram)]
            entries.append((ctx, gram[-1], logp * LN10, ext))
    entries.sort(key=lambda e: (e[0], e[1]))

    n_entries = len(entries)
    ent_word = np.empty(n_entries, dtype=np.int64)
    ent_prob = np.empty(n_entries, dtype=np.float64)
    ent_ext = np.empty(n_entries, dtype=np.int64)
    st_lo = np.zeros(n_states, dtype=np.int64)
    st_hi = np.zeros(n_states, dtype=np.int64)
    prev_ctx = -1
    for i, (ctx, w, lp, ext) in enumerate(entries):
        ent_word[i] = w
        ent_prob[i] = lp
        ent_ext[i] = ext
        if ctx != prev_ctx:
            st_lo[ctx] = i
            prev_ctx = ctx
        st_hi[ctx] = i + 1

    bos_gram = (model.vocab[BOS],)
    init_state = states.get(bos_gram, 0) if order > 1 else 0

    tables = DecodeTables(
        word_ids=word_ids,
        unk_id=model.vocab[UNK],
        bos_id=model.vocab[BOS],
        eos_id=model.vocab[EOS],
        init_state=init_state,
        ent_word=ent_word,
        ent_prob=ent_prob,
        ent_ext=ent_ext,
        st_lo=st_lo,
        st_hi=st_hi,
        st_bow=st_bow,
        st_back=st_back,
    )
    model._decode_tables = tables
    return tables
