"""Greedy CTC decoding and vocabulary-constrained CTC prefix beam search
with n-gram shallow fusion.

Scores live in natural log throughout the decoder.  The fused beam score of
a candidate y is

    log_bs = log P_am(y) + alpha * log P_lm(y) + beta * bonus(y)

where P_am is the summed CTC path mass, P_lm the n-gram probability of the
completed words (no end-of-sentence term during search), and bonus(y) the
word count (or, behind the ``char_bonus`` switch, the non-space character
count).  The n-gram conditional and count bonus are applied when a space
closes a word, and once more at utterance end for a final complete word.

By convention the CTC blank is the first alphabet entry.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, trie_vocab
from .errors import ConfigError, DecodeError, IntegrityError
from .ngram_lm import compile_decode_tables


@dataclass
class BeamConfig:
    """Beam search parameters.

    Parameters
    ----------
    beam_width : int
        Number of prefixes kept per frame; wide beams (the 1024 default)
        keep enough candidate diversity for rescoring to matter.
    alpha : float
        Weight of the n-gram log-probability in the fused score.
    beta : float
        Weight of the count bonus in the fused score.
    lm : NGramModel, optional
        Shallow-fusion language model; requires a trie.
    trie : PrefixTrie, optional
        Decoding vocabulary; restricts extensions to in-vocabulary words.
    prune_floor_ln : float
        Numeric-hygiene floor: prefixes whose total path mass falls more
        than e**prune_floor_ln below the frame's best prefix are dropped
        regardless of beam slack.
    char_bonus : bool
        Alternative reading of the count bonus: count non-blank, non-space
        characters instead of completed words.
    """

    beam_width: int = 1024
    alpha: float = 0.0
    beta: float = 0.0
    lm: object = None
    trie: object = None
    prune_floor_ln: float = -30.0
    char_bonus: bool = False

    def validate(self):
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.lm is not None and self.trie is None:
            raise ConfigError("shallow fusion requires a vocabulary trie")


@dataclass(frozen=True)
class Candidate:
    """One N-best entry with its score decomposition."""

    text: str
    log_am: float
    log_lm: float
    word_count: int
    log_bs: float
    rank: int
    rescorer_score: float | None = None

    @property
    def tokens(self):
        return tuple(self.text.split())


@dataclass
class NBestList:
    utterance_id: str
    candidates: tuple
    pruned_mass: float = 0.0

    def __post_init__(self):
        self.candidates = tuple(self.candidates)
        texts = [c.text for c in self.candidates]
        if len(set(texts)) != len(texts):
            raise IntegrityError(f"{self.utterance_id}: duplicate candidate texts")

    def __len__(self):
        return len(self.candidates)

    def top(self):
        return self.candidates[0]


def greedy_decode(z):
    """Per-frame argmax, collapse repeats, drop blanks, split on space."""
    best = np.argmax(z.frames, axis=1)
    chars = []
    last = -1
    for c in best:
        if c != last and c != 0:
            chars.append(z.alphabet[c])
        last = c
    return " ".join("".join(chars).split())


_EMPTY_I = np.empty(0, dtype=np.int64)
_EMPTY_F = np.empty(0, dtype=np.float64)
_ONE_I = np.zeros(1, dtype=np.int64)
_ONE_F = np.zeros(1, dtype=np.float64)


def beam_search(z, cfg):
    """Run CTC prefix beam search over one utterance.

    Returns an :class:`NBestList` of up to ``cfg.beam_width`` unique
    transcripts sorted by fused score, each carrying its full score
    decomposition.
    """
    cfg.validate()
    alphabet = tuple(z.alphabet)
    K = len(alphabet)
    blank_id = 0
    space_id = alphabet.index(" ") if " " in alphabet else -1

    use_lm = cfg.lm is not None
    use_trie = cfg.trie is not None
    lm_tables = compile_decode_tables(cfg.lm) if use_lm else None

    if use_trie:
        if space_id < 0:
            raise ConfigError("trie-constrained decoding needs a space symbol")
        tt = trie_vocab.compile_tables(
            cfg.trie, alphabet, blank_index=blank_id, lm_tables=lm_tables
        )
        if tt.reachable_words == 0:
            raise ConfigError("no vocabulary word is spellable over this alphabet")
        trie_child, trie_terminal, trie_word = tt.child, tt.terminal, tt.word
    else:
        trie_child = np.full((1, K), -1, dtype=np.int64)
        trie_terminal = np.zeros(1, dtype=np.uint8)
        trie_word = np.full(1, -1, dtype=np.int64)

    if use_lm:
        ent_word, ent_prob, ent_ext = (
            lm_tables.ent_word,
            lm_tables.ent_prob,
            lm_tables.ent_ext,
        )
        st_lo, st_hi, st_bow, st_back = (
            lm_tables.st_lo,
            lm_tables.st_hi,
            lm_tables.st_bow,
            lm_tables.st_back,
        )
        lm_init = lm_tables.init_state
    else:
        ent_word, ent_prob, ent_ext = _EMPTY_I, _EMPTY_F, _EMPTY_I
        st_lo, st_hi, st_bow, st_back = _ONE_I, _ONE_I, _ONE_F, _ONE_I
        lm_init = 0

    with np.errstate(divide="ignore"):
        lz = np.ascontiguousarray(np.log(z.frames), dtype=np.float64)

    out = kernels.beam_search_kernel(
        lz,
        np.int64(blank_id),
        np.int64(space_id),
        np.int64(cfg.beam_width),
        float(cfg.alpha),
        float(cfg.beta),
        float(cfg.prune_floor_ln),
        bool(cfg.char_bonus),
        bool(use_trie),
        trie_child,
        trie_terminal,
        trie_word,
        bool(use_lm),
        ent_word,
        ent_prob,
        ent_ext,
        st_lo,
        st_hi,
        st_bow,
        st_back,
        np.int64(lm_init),
    )
    (
        status,
        pruned_lin,
        n_beams,
        beam_node,
        beam_pb,
        beam_pnb,
        _n_nodes,
        node_parent,
        node_char,
        node_trie,
        node_lm,
        node_loglm,
        node_wc,
    ) = out
    if status >= 0:
        raise DecodeError(
            f"{z.utterance_id}: beam emptied at frame {int(status)} "
            "(all extensions blocked or below the mass floor)"
        )

    def chars_of(v):
        out = []
        while v != 0:
            out.append(alphabet[node_char[v]])
            v = node_parent[v]
        return "".join(reversed(out))

    # finalize: closure of the last word, validity, and text merging
    merged = {}
    for i in range(int(n_beams)):
        v = int(beam_node[i])
        log_am = kernels._lae(float(beam_pb[i]), float(beam_pnb[i]))
        loglm = float(node_loglm[v])
        bonus = int(node_wc[v])
        ut = int(node_trie[v])
        if use_trie:
            if ut == 0:
                pass  # at a word boundary (or the empty transcript)
            elif trie_terminal[ut]:
                if use_lm:
                    lp, _ = kernels.lm_lookup(
                        int(node_lm[v]), int(trie_word[ut]), lm_tables
                    )
                    loglm += lp
                if not cfg.char_bonus:
                    bonus += 1
            else:
                # mid-word prefix: not a sequence of vocabulary words
                pruned_lin += math.exp(log_am) if log_am > -np.inf else 0.0
                continue
            raw = chars_of(v)
            text = " ".join(raw.split())
        else:
            text = chars_of(v)
            last = int(node_char[v]) if v != 0 else -1
            if not cfg.char_bonus and v != 0 and last != space_id:
                bonus += 1
        prev = merged.get(text)
        if prev is None:
            merged[text] = [log_am, loglm, bonus, v]
        else:
            prev[0] = kernels._lae(prev[0], log_am)
            prev[3] = min(prev[3], v)

    if not merged:
        raise DecodeError(
            f"{z.utterance_id}: no word-complete candidate at utterance end"
        )

    scored = []
    for text, (log_am, loglm, bonus, created) in merged.items():
        log_bs = log_am + cfg.alpha * loglm + cfg.beta * bonus
        scored.append((-log_bs, created, text, log_am, loglm, bonus, log_bs))
    scored.sort(key=lambda item: (item[0], item[1]))

    candidates = []
    for rank, (_, _, text, log_am, loglm, bonus, log_bs) in enumerate(scored):
        candidates.append(
            Candidate(
                text=text,
                log_am=log_am,
                log_lm=loglm,
                word_count=len(text.split()),
                log_bs=log_bs,
                rank=rank,
            )
        )
    return NBestList(
        utterance_id=z.utterance_id,
        candidates=tuple(candidates),
        pruned_mass=float(pruned_lin),
    )


# ----------------------------------------------------------------------
# N-best record files
# ----------------------------------------------------------------------
#
# One candidate per line:
#   utterance_id  rank  log_am  log_lm  word_count  log_bs  text
# with rescorer_score and the interpolated score appended after the text for
# rescored lists.  Floats carry 9 significant digits.


def _fmt(x):
    return f"{x:.9g}"


def write_nbest(nbest_lists, path, gamma=None):
    with open(path, "w", encoding="utf-8") as fh:
        for nbest in nbest_lists:
            for cand in nbest.candidates:
                row = [
                    nbest.utterance_id,
                    str(cand.rank),
                    _fmt(cand.log_am),
                    _fmt(cand.log_lm),
                    str(cand.word_count),
                    _fmt(cand.log_bs),
                    cand.text,
                ]
                if cand.rescorer_score is not None:
                    row.append(_fmt(cand.rescorer_score))
                    if gamma is not None:
                        combined = (1 - gamma) * cand.log_bs + gamma * cand.rescorer_score
                        row.append(_fmt(combined))
                fh.write("\t".join(row) + "\n")


def read_nbest(path):
    lists = {}
    order = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) not in (7, 8, 9):
                raise IntegrityError(f"{path}:{lineno}: bad n-best record")
            utt, rank, log_am, log_lm, wc, log_bs, text = parts[:7]
            rescorer = float(parts[7]) if len(parts) >= 8 else None
            cand = Candidate(
                text=text,
                log_am=float(log_am),
                log_lm=float(log_lm),
                word_count=int(wc),
                log_bs=float(log_bs),
                rank=int(rank),
                rescorer_score=rescorer,
            )
            if utt not in lists:
                lists[utt] = []
                order.append(utt)
            lists[utt].append(cand)
    return [NBestList(utterance_id=u, candidates=tuple(lists[u])) for u in order]
