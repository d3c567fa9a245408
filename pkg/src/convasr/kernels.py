"""Hot numeric kernels: word edit distance and the CTC prefix beam search loop.

Both kernels exist in two flavours selected at import time:

* a numba ``@njit`` build (default when numba is importable), and
* a pure interpreter/numpy build, selected by setting ``CONVASR_PURE_NUMPY=1``
  in the environment before import, or at runtime via :func:`set_backend`.

The beam search is written once in array-only style and compiled twice, so
both backends execute the identical sequence of floating-point operations.
``benchmarks/bench_backends.py`` compares the two.
"""

import math
import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAS_NUMBA = False

PURE_ENV_FLAG = "CONVASR_PURE_NUMPY"

NEG_INF = -np.inf

_jit_disabled_at_import = os.environ.get(PURE_ENV_FLAG, "").strip().lower() in (
    "1",
    "true",
    "yes",
)
JIT_BUILT = HAS_NUMBA and not _jit_disabled_at_import

_active = "numba" if JIT_BUILT else "numpy"


def active_backend():
    """Name of the backend currently used by the dispatching wrappers."""
    return _active


def set_backend(name):
    """Switch kernel backend at runtime ("numba" or "numpy").

    The numba backend is only available when numba was importable and
    ``CONVASR_PURE_NUMPY`` was not set at import time.
    """
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not JIT_BUILT:
        raise RuntimeError("numba backend unavailable in this process")
    _active = name


# ----------------------------------------------------------------------
# Word/character Levenshtein distance over integer id arrays
# ----------------------------------------------------------------------


def _levenshtein_loops(a, b):
    # Two-row dynamic program; a and b are 1-d integer arrays.
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.empty(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            d = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            e = prev[j] + 1
            if e < d:
                d = e
            f = cur[j - 1] + 1
            if f < d:
                d = f
            cur[j] = d
        tmp = prev
        prev = cur
        cur = tmp
    return prev[m]


def _levenshtein_numpy(a, b):
    # Vectorised rows: insert/substitute elementwise, the deletion chain via
    # the minimum-accumulate identity cur[j] = min_k<=j (t[k] + (j - k)).
    n = int(a.shape[0])
    m = int(b.shape[0])
    if n == 0:
        return m
    if m == 0:
        return n
    pos = np.arange(1, m + 1, dtype=np.int64)
    prev = np.arange(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        sub = prev[:-1] + (a[i - 1] != b)
        ins = prev[1:] + 1
        t = np.minimum(sub, ins)
        t = np.minimum(t, i + pos)
        cur = np.minimum.accumulate(t - pos) + pos
        prev = np.concatenate(([np.int64(i)], cur))
    return int(prev[m])


def levenshtein(a, b):
    """Minimal insert/delete/substitute count between two integer id arrays."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if _active == "numba":
        return int(_levenshtein_jit(a, b))
    return int(_levenshtein_numpy(a, b))


# ----------------------------------------------------------------------
# CTC prefix beam search
# ----------------------------------------------------------------------
#
# State layout. Prefixes live in a growing prefix tree:
#   node_parent[v], node_char[v]     path structure (root = node 0, char -1)
#   node_trie[v]                     vocabulary-trie node of the partial word
#   node_lm[v]                       n-gram context state after the last
#                                    completed word
#   node_loglm[v]                    accumulated natural-log n-gram score of
#                                    completed words
#   node_wc[v]                       accumulated bonus count (words, or
#                                    non-space characters in char-bonus mode)
#   node_child[v, c]                 child node for character c, -1 if unbuilt
#
# Per frame, candidate successor prefixes are merged in flat arrays; `stamp`
# maps an existing node to its candidate slot for the current frame.  New
# prefixes (fresh extensions) cannot collide with each other and only become
# tree nodes if they survive selection.
#
# The n-gram model arrives as a flat backoff automaton: entries sorted by
# (state, word) with per-state spans, natural-log probabilities, a successor
# state per entry, and per-state backoff weight/state.


def _lae(a, b):
    # log(exp(a) + exp(b)) without overflow; tolerates -inf.
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _lm_lookup(st, w, ent_word, ent_prob, ent_ext, st_lo, st_hi, st_bow, st_back):
    # Backoff-chain score of word w from context state st.
    acc = 0.0
    while True:
        lo = st_lo[st]
        hi = st_hi[st]
        found = np.int64(-1)
        while lo < hi:
            mid = (lo + hi) // 2
            ew = ent_word[mid]
            if ew == w:
                found = mid
                break
            elif ew < w:
                lo = mid + 1
            else:
                hi = mid
        if found >= 0:
            return acc + ent_prob[found], ent_ext[found]
        if st == 0:
            # Unreachable for well-formed tables (state 0 covers the full
            # vocabulary); return a hard floor rather than looping.
            return acc - 1e30, np.int64(0)
        acc += st_bow[st]
        st = st_back[st]


def _beam_search_core(
    lz,
    blank_id,
    space_id,
    beam_width,
    alpha,
    beta,
    floor_ln,
    char_bonus,
    use_trie,
    trie_child,
    trie_terminal,
    trie_word,
    use_lm,
    ent_word,
    ent_prob,
    ent_ext,
    st_lo,
    st_hi,
    st_bow,
    st_back,
    lm_init,
):
    T, K = lz.shape

    cap = 4096
    node_parent = np.full(cap, -1, dtype=np.int64)
    node_char = np.full(cap, -1, dtype=np.int64)
    node_trie = np.zeros(cap, dtype=np.int64)
    node_lm = np.zeros(cap, dtype=np.int64)
    node_loglm = np.zeros(cap, dtype=np.float64)
    node_wc = np.zeros(cap, dtype=np.int64)
    node_child = np.full((cap, K), -1, dtype=np.int64)
    stamp = np.full(cap, -1, dtype=np.int64)
    slot_of = np.zeros(cap, dtype=np.int64)

    n_nodes = 1  # node 0 = root / empty prefix
    node_lm[0] = lm_init

    cand_cap = beam_width * (K + 1) + K + 2
    c_node = np.empty(cand_cap, dtype=np.int64)
    c_parent = np.empty(cand_cap, dtype=np.int64)
    c_char = np.empty(cand_cap, dtype=np.int64)
    c_pb = np.empty(cand_cap, dtype=np.float64)
    c_pnb = np.empty(cand_cap, dtype=np.float64)
    c_trie = np.empty(cand_cap, dtype=np.int64)
    c_lm = np.empty(cand_cap, dtype=np.int64)
    c_loglm = np.empty(cand_cap, dtype=np.float64)
    c_wc = np.empty(cand_cap, dtype=np.int64)
    c_tot = np.empty(cand_cap, dtype=np.float64)
    c_negfused = np.empty(cand_cap, dtype=np.float64)

    beam_node = np.zeros(beam_width, dtype=np.int64)
    beam_pb = np.full(beam_width, NEG_INF, dtype=np.float64)
    beam_pnb = np.full(beam_width, NEG_INF, dtype=np.float64)
    beam_pb[0] = 0.0
    n_beams = 1

    pruned_lin = 0.0
    status = np.int64(-1)

    for t in range(T):
        nc = 0
        for i in range(n_beams):
            u = beam_node[i]
            pb = beam_pb[i]
            pnb = beam_pnb[i]
            ptot = _lae(pb, pnb)
            if ptot == NEG_INF:
                continue
            cu = node_char[u]

            # stay on the same prefix: blank, and collapsing repeat
            lzb = lz[t, blank_id]
            stay_pb = NEG_INF
            stay_pnb = NEG_INF
            if lzb > NEG_INF:
                stay_pb = ptot + lzb
            if cu >= 0 and pnb > NEG_INF:
                lzc = lz[t, cu]
                if lzc > NEG_INF:
                    stay_pnb = pnb + lzc
            if stay_pb > NEG_INF or stay_pnb > NEG_INF:
                if stamp[u] == t:
                    s = slot_of[u]
                else:
                    s = nc
                    nc += 1
                    stamp[u] = t
                    slot_of[u] = s
                    c_node[s] = u
                    c_pb[s] = NEG_INF
                    c_pnb[s] = NEG_INF
                    c_trie[s] = node_trie[u]
                    c_lm[s] = node_lm[u]
                    c_loglm[s] = node_loglm[u]
                    c_wc[s] = node_wc[u]
                c_pb[s] = _lae(c_pb[s], stay_pb)
                c_pnb[s] = _lae(c_pnb[s], stay_pnb)

            # extensions by one character
            ut = node_trie[u]
            for c in range(K):
                if c == blank_id:
                    continue
                lzc = lz[t, c]
                if lzc == NEG_INF:
                    continue
                new_trie = np.int64(0)
                if use_trie:
                    if c == space_id:
                        if trie_terminal[ut] == 0:
                            continue
                    else:
                        v_trie = trie_child[ut, c]
                        if v_trie < 0:
                            continue
                        new_trie = v_trie
                if c == cu:
                    if pb == NEG_INF:
                        continue
                    mass = pb + lzc
                else:
                    mass = ptot + lzc

                v = node_child[u, c]
                if v >= 0:
                    if stamp[v] == t:
                        s = slot_of[v]
                    else:
                        s = nc
                        nc += 1
                        stamp[v] = t
                        slot_of[v] = s
                        c_node[s] = v
                        c_pb[s] = NEG_INF
                        c_pnb[s] = NEG_INF
                        c_trie[s] = node_trie[v]
                        c_lm[s] = node_lm[v]
                        c_loglm[s] = node_loglm[v]
                        c_wc[s] = node_wc[v]
                    c_pnb[s] = _lae(c_pnb[s], mass)
                else:
                    s = nc
                    nc += 1
                    c_node[s] = -1
                    c_parent[s] = u
                    c_char[s] = c
                    c_pb[s] = NEG_INF
                    c_pnb[s] = mass
                    if use_trie and c == space_id:
                        # closing a complete word
                        if use_lm:
                            w = trie_word[ut]
                            lp, new_state = _lm_lookup(
                                node_lm[u],
                                w,
                                ent_word,
                                ent_prob,
                                ent_ext,
                                st_lo,
                                st_hi,
                                st_bow,
                                st_back,
                            )
                            c_loglm[s] = node_loglm[u] + lp
                            c_lm[s] = new_state
                        else:
                            c_loglm[s] = node_loglm[u]
                            c_lm[s] = node_lm[u]
                        c_trie[s] = 0
                        if char_bonus:
                            c_wc[s] = node_wc[u]
                        else:
                            c_wc[s] = node_wc[u] + 1
                    else:
                        c_loglm[s] = node_loglm[u]
                        c_lm[s] = node_lm[u]
                        c_trie[s] = new_trie
                        if char_bonus:
                            if c == space_id:
                                c_wc[s] = node_wc[u]
                            else:
                                c_wc[s] = node_wc[u] + 1
                        elif space_id >= 0 and c == space_id:
                            # unconstrained word counting: a space closes a
                            # word when the prefix does not already end in one
                            if cu >= 0 and cu != space_id:
                                c_wc[s] = node_wc[u] + 1
                            else:
                                c_wc[s] = node_wc[u]
                        else:
                            c_wc[s] = node_wc[u]

        if nc == 0:
            status = np.int64(t)
            n_beams = 0
            break

        best_tot = NEG_INF
        for s in range(nc):
            tot = _lae(c_pb[s], c_pnb[s])
            c_tot[s] = tot
            if tot > best_tot:
                best_tot = tot
            c_negfused[s] = -(tot + alpha * c_loglm[s] + beta * c_wc[s])
        mass_floor = best_tot + floor_ln

        order = np.argsort(c_negfused[:nc], kind="mergesort")

        # make room for up to beam_width new nodes
        if n_nodes + beam_width + 1 > cap:
            new_cap = cap
            while n_nodes + beam_width + 1 > new_cap:
                new_cap *= 2
            np_parent = np.full(new_cap, -1, dtype=np.int64)
            np_char = np.full(new_cap, -1, dtype=np.int64)
            np_trie = np.zeros(new_cap, dtype=np.int64)
            np_lm = np.zeros(new_cap, dtype=np.int64)
            np_loglm = np.zeros(new_cap, dtype=np.float64)
            np_wc = np.zeros(new_cap, dtype=np.int64)
            np_childs = np.full((new_cap, K), -1, dtype=np.int64)
            np_stamp = np.full(new_cap, -1, dtype=np.int64)
            np_slot = np.zeros(new_cap, dtype=np.int64)
            np_parent[:cap] = node_parent
            np_char[:cap] = node_char
            np_trie[:cap] = node_trie
            np_lm[:cap] = node_lm
            np_loglm[:cap] = node_loglm
            np_wc[:cap] = node_wc
            np_childs[:cap] = node_child
            np_stamp[:cap] = stamp
            np_slot[:cap] = slot_of
            node_parent = np_parent
            node_char = np_char
            node_trie = np_trie
            node_lm = np_lm
            node_loglm = np_loglm
            node_wc = np_wc
            node_child = np_childs
            stamp = np_stamp
            slot_of = np_slot
            cap = new_cap

        n_new = 0
        for oi in range(nc):
            s = order[oi]
            tot = c_tot[s]
            if tot == NEG_INF:
                continue
            if n_new < beam_width and tot >= mass_floor:
                v = c_node[s]
                if v < 0:
                    v = n_nodes
                    n_nodes += 1
                    node_parent[v] = c_parent[s]
                    node_char[v] = c_char[s]
                    node_trie[v] = c_trie[s]
                    node_lm[v] = c_lm[s]
                    node_loglm[v] = c_loglm[s]
                    node_wc[v] = c_wc[s]
                    node_child[c_parent[s], c_char[s]] = v
                beam_node[n_new] = v
                beam_pb[n_new] = c_pb[s]
                beam_pnb[n_new] = c_pnb[s]
                n_new += 1
            else:
                pruned_lin += math.exp(tot)
        n_beams = n_new
        if n_beams == 0:
            status = np.int64(t)
            break

    return (
        status,
        pruned_lin,
        n_beams,
        beam_node[:n_beams].copy(),
        beam_pb[:n_beams].copy(),
        beam_pnb[:n_beams].copy(),
        n_nodes,
        node_parent[:n_nodes].copy(),
        node_char[:n_nodes].copy(),
        node_trie[:n_nodes].copy(),
        node_lm[:n_nodes].copy(),
        node_loglm[:n_nodes].copy(),
        node_wc[:n_nodes].copy(),
    )


# keep interpreter references before any jit rebinding
beam_search_python = _beam_search_core
lm_lookup_python = _lm_lookup
levenshtein_python = _levenshtein_loops

if JIT_BUILT:
    _lae = numba.njit(cache=True, inline="always")(_lae)
    _lm_lookup = numba.njit(cache=True)(_lm_lookup)
    _levenshtein_jit = numba.njit(cache=True)(_levenshtein_loops)
    beam_search_numba = numba.njit(cache=True)(_beam_search_core)
else:  # pragma: no cover - exercised via the env flag
    _levenshtein_jit = _levenshtein_loops
    beam_search_numba = None


def beam_search_kernel(*args):
    """Dispatch the beam search core to the active backend."""
    if _active == "numba":
        return beam_search_numba(*args)
    return beam_search_python(*args)


def lm_lookup(st, w, tables):
    """Python-side scoring of one word from a context state (see ngram_lm)."""
    lp, nxt = lm_lookup_python(
        np.int64(st),
        np.int64(w),
        tables.ent_word,
        tables.ent_prob,
        tables.ent_ext,
        tables.st_lo,
        tables.st_hi,
        tables.st_bow,
        tables.st_back,
    )
    return float(lp), int(nxt)
