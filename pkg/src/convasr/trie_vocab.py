"""Prefix trie over the decoding vocabulary.

The trie enforces the beam search's out-of-vocabulary constraint: a character
may extend a partial word only if some vocabulary word continues that way,
and a space may only close a complete word.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import VocabularyError


class PrefixTrie:
    """Immutable character trie with one terminal per vocabulary word."""

    __slots__ = ("_children", "_terminal", "_size", "_compiled")

    def __init__(self):
        self._children = [{}]  # node -> {char: node}
        self._terminal = [False]
        self._size = 0
        self._compiled = {}

    def __len__(self):
        return self._size

    def _insert(self, word):
        node = 0
        for ch in word:
            nxt = self._children[node].get(ch)
            if nxt is None:
                nxt = len(self._children)
                self._children[node][ch] = nxt
                self._children.append({})
                self._terminal.append(False)
            node = nxt
        if not self._terminal[node]:
            self._terminal[node] = True
            self._size += 1

    def _walk(self, prefix):
        node = 0
        for ch in prefix:
            node = self._children[node].get(ch)
            if node is None:
                return None
        return node

    def allowed_extensions(self, prefix):
        """Characters c such that prefix+c still leads to a vocabulary word."""
        node = self._walk(prefix)
        if node is None:
            return set()
        return set(self._children[node])

    def is_word(self, s):
        node = self._walk(s)
        return node is not None and self._terminal[node]

    def words(self):
        """Enumerate the vocabulary spelled by terminal paths."""
        out = []

        def rec(node, path):
            if self._terminal[node]:
                out.append("".join(path))
            for ch in sorted(self._children[node]):
                path.append(ch)
                rec(self._children[node][ch], path)
                path.pop()

        rec(0, [])
        return frozenset(out)

    def node_count(self):
        return len(self._children)


def build(vocabulary, blank_symbol=None):
    """Build a trie; rejects empty words and words containing space or blank."""
    trie = PrefixTrie()
    for word in sorted(set(vocabulary)):
        if not word:
            raise VocabularyError("empty vocabulary word")
        if any(ch.isspace() for ch in word):
            raise VocabularyError(f"word {word!r} contains whitespace")
        if blank_symbol is not None and blank_symbol in word:
            raise VocabularyError(f"word {word!r} contains the blank symbol")
        trie._insert(word)
    return trie


def allowed_extensions(trie, prefix):
    return trie.allowed_extensions(prefix)


def is_word(trie, s):
    return trie.is_word(s)


@dataclass
class TrieTables:
    """Dense per-alphabet arrays for the beam kernel."""

    child: np.ndarray  # (nodes, K) int64, -1 absent
    terminal: np.ndarray  # (nodes,) uint8
    word: np.ndarray  # (nodes,) int64: LM word id at terminals, -1 elsewhere
    reachable_words: int
    skipped_words: tuple = field(default=())


def compile_tables(trie, alphabet, blank_index=0, lm_tables=None):
    """Compile the trie against a decoding alphabet.

    Words containing characters outside the alphabet (or the blank or space
    symbols) are unreachable by the decoder and are skipped.  Terminal nodes
    carry the LM word id when `lm_tables` is given.
    """
    alphabet = tuple(alphabet)
    key = (alphabet, blank_index, id(lm_tables))
    cached = trie._compiled.get(key)
    if cached is not None:
        return cached

    char_index = {ch: i for i, ch in enumerate(alphabet)}
    K = len(alphabet)

    children = [dict()]
    terminal = [False]
    word_at = [-1]

    reachable = 0
    skipped = []
    for w in sorted(trie.words()):
        idxs = []
        ok = True
        for ch in w:
            ci = char_index.get(ch)
            if ci is None or ci == blank_index or ch == " ":
                ok = False
                break
            idxs.append(ci)
        if not ok:
            skipped.append(w)
            continue
        node = 0
        for ci in idxs:
            nxt = children[node].get(ci)
            if nxt is None:
                nxt = len(children)
                children[node][ci] = nxt
                children.append({})
                terminal.append(False)
                word_at.append(-1)
            node = nxt
        terminal[node] = True
        word_at[node] = lm_tables.word_id(w) if lm_tables is not None else reachable
        reachable += 1

    n = len(children)
    child = np.full((n, K), -1, dtype=np.int64)
    for node, kids in enumerate(children):
        for ci, nxt in kids.items():
            child[node, ci] = nxt
    tables = TrieTables(
        child=child,
        terminal=np.array(terminal, dtype=np.uint8),
        word=np.array(word_at, dtype=np.int64),
        reachable_words=reachable,
        skipped_words=tuple(skipped),
    )
    trie._compiled[key] = tables
    return tables
