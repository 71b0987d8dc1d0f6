# Log-space CTC kernels. Row t of `logp` holds log posteriors over [blank] + charset.
import numpy as np
from numba import njit

NEG_INF = -np.inf
# infinities are meaningful here, so only value-safe fast-math flags
_FM = {"nsz", "arcp", "contract", "afn", "reassoc"}


@njit(cache=True, fastmath=_FM)
def logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True, fastmath=_FM)
def logaddexp3(a, b, c):
    m = max(a, max(b, c))
    if m == NEG_INF:
        return NEG_INF
    return m + np.log(np.exp(a - m) + np.exp(b - m) + np.exp(c - m))


@njit(cache=True)
def extend_labels(labels, blank):
    S = 2 * labels.shape[0] + 1
    ext = np.full(S, blank, dtype=np.int64)
    for i in range(labels.shape[0]):
        ext[2 * i + 1] = labels[i]
    return ext


@njit(cache=True)
def _can_skip(ext, s, blank):
    return s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]


@njit(cache=True, fastmath=_FM)
def forward_trellis(logp, ext, blank):
    T = logp.shape[0]
    S = ext.shape[0]
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(max(0, S - 2 * (T - t)), min(S, 2 * t + 2)):
            if _can_skip(ext, s, blank):
                a = logaddexp3(alpha[t - 1, s], alpha[t - 1, s - 1], alpha[t - 1, s - 2])
            elif s >= 1:
                a = logaddexp(alpha[t - 1, s], alpha[t - 1, s - 1])
            else:
                a = alpha[t - 1, s]
            if a != NEG_INF:
                alpha[t, s] = a + logp[t, ext[s]]
    return alpha


@njit(cache=True, fastmath=_FM)
def backward_trellis(logp, ext, blank):
    # beta[t, s] includes the emission at frame t
    T = logp.shape[0]
    S = ext.shape[0]
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = logp[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = logp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(max(0, S - 2 * (T - t)), min(S, 2 * t + 2)):
            if s + 2 < S and _can_skip(ext, s + 2, blank):
                b = logaddexp3(beta[t + 1, s], beta[t + 1, s + 1], beta[t + 1, s + 2])
            elif s + 1 < S:
                b = logaddexp(beta[t + 1, s], beta[t + 1, s + 1])
            else:
                b = beta[t + 1, s]
            if b != NEG_INF:
                beta[t, s] = b + logp[t, ext[s]]
    return beta


@njit(cache=True, fastmath=_FM)
def loss_and_grad(logp, labels, blank):
    """Negative log-likelihood and its gradient w.r.t. the pre-softmax logits."""
    ext = extend_labels(labels, blank)
    alpha = forward_trellis(logp, ext, blank)
    beta = backward_trellis(logp, ext, blank)
    T, K = logp.shape
    S = ext.shape[0]
    ll = alpha[T - 1, S - 1]
    if S > 1:
        ll = logaddexp(ll, alpha[T - 1, S - 2])
    grad = np.exp(logp)
    if ll == NEG_INF:
        return np.inf, grad
    for t in range(T):
        for s in range(max(0, S - 2 * (T - t)), min(S, 2 * t + 2)):
            g = alpha[t, s] + beta[t, s]
            if g != NEG_INF:
                k = ext[s]
                grad[t, k] -= np.exp(g - logp[t, k] - ll)
    return -ll, grad


@njit(cache=True)
def viterbi_states(logp, ext, blank):
    """Best single path through the trellis, as an extended-label state per frame."""
    T = logp.shape[0]
    S = ext.shape[0]
    score = np.full((T, S), NEG_INF)
    back = np.zeros((T, S), dtype=np.int64)
    score[0, 0] = logp[0, ext[0]]
    if S > 1:
        score[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            best = score[t - 1, s]
            arg = s
            if s >= 1 and score[t - 1, s - 1] > best:
                best = score[t - 1, s - 1]
                arg = s - 1
            if _can_skip(ext, s, blank) and score[t - 1, s - 2] > best:
                best = score[t - 1, s - 2]
                arg = s - 2
            if best != NEG_INF:
                score[t, s] = best + logp[t, ext[s]]
                back[t, s] = arg
    s = S - 1
    if S > 1 and score[T - 1, S - 2] > score[T - 1, S - 1]:
        s = S - 2
    states = np.zeros(T, dtype=np.int64)
    best_score = score[T - 1, s]
    for t in range(T - 1, -1, -1):
        states[t] = s
        s = back[t, s]
    return states, best_score
