"""Context-stacked feed-forward CTC acoustic model, trained with Adam in numpy."""
from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _ctc
from .rng import keyed_rng
from .synth import N_CHARS, encode, tokens_to_string

log = logging.getLogger(__name__)

BLANK = 0
N_OUT = N_CHARS + 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")

CKPT_MAGIC = b"WSPM"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIII")


class LabelTooLongError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def label_ids(tokens: Sequence[str]) -> np.ndarray:
    """Model output indices for a transcript (charset index + 1; 0 is blank)."""
    return encode(tokens_to_string(tokens)) + 1


def min_frames(labels: np.ndarray) -> int:
    """Shortest input that can emit `labels` under CTC (repeats need a blank between)."""
    if len(labels) == 0:
        return 1
    repeats = int(np.sum(labels[1:] == labels[:-1]))
    return len(labels) + repeats


def check_length(T: int, labels: np.ndarray) -> None:
    need = min_frames(labels)
    if T < need:
        raise LabelTooLongError(f"label needs {need} frames, input has {T}")


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def stack_context(frames: np.ndarray, context: int) -> np.ndarray:
    """(T, d) -> (T, d * (2c + 1)); rows ordered t-c .. t+c, zero-padded at the edges."""
    T, d = frames.shape
    padded = np.zeros((T + 2 * context, d), dtype=np.float64)
    padded[context : context + T] = frames
    return np.concatenate([padded[i : i + T] for i in range(2 * context + 1)], axis=1)


@dataclass
class AcousticModel:
    dim: int = 16
    context: int = 2
    hidden: int = 128
    n_out: int = N_OUT
    params: dict = field(default_factory=dict)

    @property
    def in_dim(self) -> int:
        return self.dim * (2 * self.context + 1)

    @classmethod
    def init(cls, dim=16, context=2, hidden=128, seed=0) -> "AcousticModel":
        rng = keyed_rng(seed, "init")
        m = cls(dim, context, hidden)
        m.params = {
            "W1": rng.standard_normal((hidden, m.in_dim)) * np.sqrt(2.0 / m.in_dim),
            "b1": np.zeros(hidden),
            "W2": rng.standard_normal((m.n_out, hidden)) * np.sqrt(1.0 / hidden),
            "b2": np.zeros(m.n_out),
        }
        return m

    @classmethod
    def zeros(cls, dim=16, context=2, hidden=128) -> "AcousticModel":
        m = cls(dim, context, hidden)
        m.params = {
            "W1": np.zeros((hidden, m.in_dim)),
            "b1": np.zeros(hidden),
            "W2": np.zeros((m.n_out, hidden)),
            "b2": np.zeros(m.n_out),
        }
        return m

    def copy(self) -> "AcousticModel":
        return AcousticModel(self.dim, self.context, self.hidden, self.n_out,
                             {k: v.copy() for k, v in self.params.items()})

    def _check(self, frames: np.ndarray) -> None:
        if frames.ndim != 2 or frames.shape[1] != self.dim:
            raise ValueError(f"features have shape {frames.shape}, model expects (T, {self.dim})")

    def logits(self, frames: np.ndarray) -> np.ndarray:
        self._check(frames)
        x = stack_context(frames, self.context)
        h = np.maximum(x @ self.params["W1"].T + self.params["b1"], 0.0)
        return h @ self.params["W2"].T + self.params["b2"]

    def forward(self, frames: np.ndarray) -> np.ndarray:
        """Per-frame log posteriors, shape (T, n_out); column 0 is blank."""
        return log_softmax(self.logits(frames))


def forward(model: AcousticModel, frames) -> np.ndarray:
    if hasattr(frames, "frames"):
        frames = frames.frames
    return model.forward(np.asarray(frames))


# -- CTC ---------------------------------------------------------------------


@dataclass
class CtcTrellis:
    ext: np.ndarray
    log_alpha: np.ndarray
    log_beta: np.ndarray

    @property
    def forward_loglik(self) -> float:
        return float(np.logaddexp.reduce(self.log_alpha[-1, -2:]))

    @property
    def backward_loglik(self) -> float:
        return float(np.logaddexp.reduce(self.log_beta[0, :2]))


def ctc_trellis(log_posteriors: np.ndarray, labels) -> CtcTrellis:
    logp = np.ascontiguousarray(log_posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    check_length(logp.shape[0], labels)
    ext = _ctc.extend_labels(labels, BLANK)
    return CtcTrellis(ext, _ctc.forward_trellis(logp, ext, BLANK), _ctc.backward_trellis(logp, ext, BLANK))


def ctc_loss(log_posteriors: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """CTC negative log-likelihood and its exact gradient w.r.t. the pre-softmax logits.

    `labels` are output indices (1-based charset ids, blank excluded). The
    gradient assumes `log_posteriors` is a log-softmax of those logits.
    """
    logp = np.ascontiguousarray(log_posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    check_length(logp.shape[0], labels)
    loss, grad = _ctc.loss_and_grad(logp, labels, BLANK)
    return float(loss), grad


# -- optimisation ------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 5.0
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0


FINETUNE_LR = 1e-4


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] *= scale
    return norm


def batch_loss_and_grads(model: AcousticModel, batch, dtype=np.float64) -> tuple[float, dict]:
    """Mean CTC loss over `batch` [(frames, labels), ...] and parameter gradients.

    Training passes ``dtype=np.float32`` for the dense layers; the CTC recursion
    always runs in float64.
    """
    p = {k: v.astype(dtype, copy=False) for k, v in model.params.items()}
    xs = [stack_context(np.asarray(f), model.context).astype(dtype, copy=False) for f, _ in batch]
    x = np.concatenate(xs, axis=0)
    pre = x @ p["W1"].T + p["b1"]
    h = np.maximum(pre, 0.0)
    logp = log_softmax(h @ p["W2"].T + p["b2"]).astype(np.float64)

    dlogits = np.empty_like(logp)
    total = 0.0
    start = 0
    for xi, (_, labels) in zip(xs, batch):
        T = xi.shape[0]
        loss, g = _ctc.loss_and_grad(logp[start : start + T], labels, BLANK)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite CTC loss (T={T}, L={len(labels)})")
        total += loss
        dlogits[start : start + T] = g
        start += T
    n = len(batch)
    dlogits = (dlogits / n).astype(dtype, copy=False)
    dh = dlogits @ p["W2"]
    dh[pre <= 0.0] = 0.0
    grads = {
        "W1": (dh.T @ x).astype(np.float64),
        "b1": dh.sum(0, dtype=np.float64),
        "W2": (dlogits.T @ h).astype(np.float64),
        "b2": dlogits.sum(0, dtype=np.float64),
    }
    return total / n, grads


def train_step(model: AcousticModel, batch, config: TrainConfig, opt: Adam | None = None):
    """One clipped Adam update on `batch`; returns (model, mean_loss, skipped)."""
    kept = []
    for frames, labels in batch:
        labels = np.asarray(labels, dtype=np.int64)
        if len(frames) < min_frames(labels):
            continue
        kept.append((frames, labels))
    skipped = len(batch) - len(kept)
    if skipped:
        log.debug("skipped %d utterance(s) violating the CTC length constraint", skipped)
    if not kept:
        return model, float("nan"), skipped
    if opt is None:
        opt = Adam(model.params, config)
    loss, grads = batch_loss_and_grads(model, kept, dtype=np.float32)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}")
    clip_global_norm(grads, config.grad_clip_norm)
    opt.step(model.params, grads)
    return model, loss, skipped


@dataclass
class History:
    step: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    dev_wer: list = field(default_factory=list)
    skipped_per_epoch: list = field(default_factory=list)
    best_step: int = 0
    wall_time_s: float = 0.0

    def __len__(self) -> int:
        return len(self.step)


def _examples(corpus):
    out = []
    for u in corpus:
        frames = u.frames if hasattr(u, "frames") else u[0]
        tokens = u.tokens if hasattr(u, "tokens") else u[1]
        out.append((np.asarray(frames, dtype=np.float64), label_ids(tokens)))
    return out


def dev_greedy_wer(model: AcousticModel, dev) -> float:
    from .decode import greedy_decode
    from .textkit import corpus_wer

    pairs = [(u.tokens, greedy_decode(model.forward(u.frames))) for u in dev]
    return corpus_wer(pairs).wer


def train(model_init: AcousticModel, corpus, dev, config: TrainConfig,
          evaluate: Callable | None = None) -> tuple[AcousticModel, History]:
    """Epochs over seeded shuffles with per-epoch dev evaluation and early stopping.

    The untrained model is evaluated first, so a fine-tune that never helps on
    dev returns its initialisation. Without a dev set the last model is returned.
    """
    if len(corpus) == 0:
        raise ValueError("empty training corpus")
    t0 = time.perf_counter()
    evaluate = evaluate or dev_greedy_wer
    model = model_init.copy()
    data = _examples(corpus)
    opt = Adam(model.params, config)
    rng = keyed_rng(config.seed, "shuffle")
    hist = History()
    best, best_wer, bad = model.copy(), np.inf, 0
    if dev:
        best_wer = evaluate(model, dev)
        hist.step.append(0)
        hist.train_loss.append(float("nan"))
        hist.dev_wer.append(best_wer)
    step = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(data))
        losses, skipped = [], 0
        for i in range(0, len(order), config.batch_size):
            batch = [data[j] for j in order[i : i + config.batch_size]]
            _, loss, sk = train_step(model, batch, config, opt)
            skipped += sk
            if np.isfinite(loss):
                losses.append(loss)
            step += 1
        hist.skipped_per_epoch.append(skipped)
        if skipped:
            log.info("epoch %d: skipped %d utterance(s) violating the CTC length constraint", epoch, skipped)
        if not dev:
            continue
        w = evaluate(model, dev)
        hist.step.append(step)
        hist.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        hist.dev_wer.append(w)
        log.debug("epoch %d step %d loss %.4f dev_wer %.4f", epoch, step, hist.train_loss[-1], w)
        if w < best_wer:
            best, best_wer, bad = model.copy(), w, 0
            hist.best_step = step
        else:
            bad += 1
            if bad >= config.patience:
                break
    hist.wall_time_s = time.perf_counter() - t0
    if any(hist.skipped_per_epoch):
        log.warning("skipped up to %d utterance(s) per epoch violating the CTC length constraint",
                    max(hist.skipped_per_epoch))
    if not dev:
        hist.best_step = step
        return model, hist
    return best, hist


# -- diagnostics -------------------------------------------------------------


def _relu_pattern(model: AcousticModel, x: np.ndarray) -> np.ndarray:
    return x @ model.params["W1"].T + model.params["b1"] > 0


def grad_check(model: AcousticModel, sample, epsilon: float = 1e-4, n_params: int = 200,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    A probe whose +-epsilon step flips a ReLU unit on some frame straddles a kink,
    where the loss is not differentiable; the step is shrunk until the activation
    pattern is unchanged, and the parameter is skipped if none is found.
    """
    frames, tokens = sample
    labels = label_ids(tokens) if not isinstance(tokens, np.ndarray) else tokens
    batch = [(np.asarray(frames, dtype=np.float64), labels)]
    _, grads = batch_loss_and_grads(model, batch)
    x = stack_context(batch[0][0], model.context)
    base = _relu_pattern(model, x)
    rng = keyed_rng(seed, "gradcheck")
    sizes = np.array([model.params[k].size for k in PARAM_NAMES])
    picks = rng.choice(sizes.sum(), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = PARAM_NAMES[which]
        arr = model.params[name].reshape(-1)
        i = flat - offsets[which]
        orig = arr[i]
        eps = epsilon
        while True:
            arr[i] = orig + eps
            lp, up = batch_loss_and_grads(model, batch), _relu_pattern(model, x)
            arr[i] = orig - eps
            lm, down = batch_loss_and_grads(model, batch), _relu_pattern(model, x)
            arr[i] = orig
            if (np.array_equal(up, base) and np.array_equal(down, base)) or eps < epsilon * 1e-4:
                break
            eps /= 10
        if not (np.array_equal(up, base) and np.array_equal(down, base)):
            continue
        numeric = (lp[0] - lm[0]) / (2 * eps)
        analytic = grads[name].reshape(-1)[i]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def forced_align(model: AcousticModel, frames, tokens) -> list[tuple[str, int, int]]:
    """Viterbi alignment of a known transcript: [(char, first_frame, last_frame), ...].

    Frames on blank states belong to no character.
    """
    logp = forward(model, frames)
    return align_posteriors(logp, tokens)


def align_posteriors(logp: np.ndarray, tokens) -> list[tuple[str, int, int]]:
    text = tokens if isinstance(tokens, str) else tokens_to_string(tokens)
    labels = encode(text) + 1
    check_length(logp.shape[0], labels)
    ext = _ctc.extend_labels(labels, BLANK)
    states, _ = _ctc.viterbi_states(np.ascontiguousarray(logp, dtype=np.float64), ext, BLANK)
    spans: list[list] = [[c, -1, -1] for c in text]
    for t, s in enumerate(states):
        if s % 2 == 1:
            sp = spans[s // 2]
            if sp[1] < 0:
                sp[1] = t
            sp[2] = t
    return [tuple(sp) for sp in spans]


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: AcousticModel, path) -> None:
    with open(path, "wb") as f:
        f.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, model.context, model.dim, model.hidden, model.n_out))
        for k in PARAM_NAMES:
            f.write(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes())


def load_checkpoint(path) -> AcousticModel:
    raw = open(path, "rb").read()
    if len(raw) < _CKPT_HEADER.size or raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    _, version, context, dim, hidden, n_out = _CKPT_HEADER.unpack_from(raw)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    m = AcousticModel(dim, context, hidden, n_out)
    shapes = {"W1": (hidden, m.in_dim), "b1": (hidden,), "W2": (n_out, hidden), "b2": (n_out,)}
    off = _CKPT_HEADER.size
    for k in PARAM_NAMES:
        n = int(np.prod(shapes[k]))
        if off + 4 * n > len(raw):
            raise CheckpointError(f"{path}: truncated at {k}")
        m.params[k] = np.frombuffer(raw, "<f4", n, off).astype(np.float64).reshape(shapes[k])
        off += 4 * n
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return m
