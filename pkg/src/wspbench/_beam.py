# Prefix beam search over a trie of prefixes, compiled with numba.
# Node 0 is the empty prefix. Output index k >= 1 is charset symbol k - 1, which is
# also its LM vocabulary index; the LM context of a node is a base-V number of its
# last n-1 symbols (oldest first), and the table holds log P(symbol | context).
import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lae(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def _grow(parent, char, ctx, bonus, children):
    cap = parent.shape[0] * 2
    p2 = np.empty(cap, np.int64)
    c2 = np.empty(cap, np.int64)
    x2 = np.empty(cap, np.int64)
    b2 = np.empty(cap, np.float64)
    ch2 = np.full((cap, children.shape[1]), -1, np.int64)
    n = parent.shape[0]
    p2[:n] = parent
    c2[:n] = char
    x2[:n] = ctx
    b2[:n] = bonus
    ch2[:n] = children
    return p2, c2, x2, b2, ch2


@njit(cache=True)
def beam_search(logp, blank, beam_width, threshold, table, n_ctx, root_ctx, eos, alpha, beta, use_lm):
    """Returns (node ids, final scores, parent, char) for the surviving beams."""
    T, K = logp.shape
    V = table.shape[1]
    cap = 1024
    parent = np.empty(cap, np.int64)
    char = np.empty(cap, np.int64)
    ctx = np.empty(cap, np.int64)
    bonus = np.empty(cap, np.float64)
    children = np.full((cap, K), -1, np.int64)
    parent[0] = -1
    char[0] = -1
    ctx[0] = root_ctx
    bonus[0] = 0.0
    n_nodes = 1

    beam_node = np.zeros(1, np.int64)
    beam_pb = np.zeros(1)
    beam_pnb = np.full(1, NEG_INF)
    # slot of a node in the next-frame accumulator, -1 when absent
    slot = np.full(cap, -1, np.int64)
    cands = np.empty(K, np.int64)

    for t in range(T):
        nc = 0
        for k in range(K):
            if k != blank and logp[t, k] > threshold:
                cands[nc] = k
                nc += 1
        nb = beam_node.shape[0]
        max_next = nb * (nc + 1)
        nx_node = np.empty(max_next, np.int64)
        nx_pb = np.full(max_next, NEG_INF)
        nx_pnb = np.full(max_next, NEG_INF)
        n_next = 0
        blank_lp = logp[t, blank]
        for i in range(nb):
            node = beam_node[i]
            pb = beam_pb[i]
            pnb = beam_pnb[i]
            total = _lae(pb, pnb)
            s = slot[node]
            if s < 0:
                s = n_next
                slot[node] = s
                nx_node[s] = node
                n_next += 1
            nx_pb[s] = _lae(nx_pb[s], total + blank_lp)
            for j in range(nc):
                k = cands[j]
                lp = logp[t, k]
                if node != 0 and char[node] == k:
                    nx_pnb[s] = _lae(nx_pnb[s], pnb + lp)
                    src = pb
                else:
                    src = total
                if src == NEG_INF:
                    continue
                child = children[node, k]
                if child < 0:
                    if n_nodes == parent.shape[0]:
                        parent, char, ctx, bonus, children = _grow(parent, char, ctx, bonus, children)
                        slot2 = np.full(parent.shape[0], -1, np.int64)
                        slot2[: slot.shape[0]] = slot
                        slot = slot2
                    child = n_nodes
                    n_nodes += 1
                    children[node, k] = child
                    parent[child] = node
                    char[child] = k
                    sym = k - 1
                    b = beta
                    if use_lm:
                        b += alpha * table[ctx[node], sym]
                    bonus[child] = bonus[node] + b
                    ctx[child] = (ctx[node] * V + sym) % n_ctx
                cs = slot[child]
                if cs < 0:
                    cs = n_next
                    slot[child] = cs
                    nx_node[cs] = child
                    n_next += 1
                nx_pnb[cs] = _lae(nx_pnb[cs], src + lp)
        scores = np.empty(n_next)
        for i in range(n_next):
            scores[i] = _lae(nx_pb[i], nx_pnb[i]) + bonus[nx_node[i]]
            slot[nx_node[i]] = -1
        keep = min(beam_width, n_next)
        if keep < n_next:
            # take everything at or above the keep-th best score, then order stably
            cut = -np.partition(-scores, keep - 1)[keep - 1]
            idx = np.nonzero(scores >= cut)[0]
            order = idx[np.argsort(-scores[idx], kind="mergesort")]
        else:
            order = np.argsort(-scores, kind="mergesort")
        beam_node = np.empty(keep, np.int64)
        beam_pb = np.empty(keep)
        beam_pnb = np.empty(keep)
        for i in range(keep):
            o = order[i]
            beam_node[i] = nx_node[o]
            beam_pb[i] = nx_pb[o]
            beam_pnb[i] = nx_pnb[o]

    nb = beam_node.shape[0]
    final = np.empty(nb)
    for i in range(nb):
        node = beam_node[i]
        final[i] = _lae(beam_pb[i], beam_pnb[i]) + bonus[node]
        if use_lm:
            final[i] += alpha * table[ctx[node], eos]
    return beam_node, final, parent[:n_nodes].copy(), char[:n_nodes].copy()
