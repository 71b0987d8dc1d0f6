"""Synthetic paired corpora: prototype-plus-noise frames rendered from sampled sentences.

Every character of the transcript owns a fixed prototype vector; an utterance is
rendered by holding each character's prototype for a random number of frames and
adding white noise plus a per-utterance channel offset.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import keyed_rng
from .textkit import normalize

CHARSET: tuple[str, ...] = tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "'")
CHAR_INDEX = {c: i for i, c in enumerate(CHARSET)}
N_CHARS = len(CHARSET)
FRAME_RATE = 100.0  # frames per second, for manifest time spans

MAGIC = b"WSPF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class CharsetError(ValueError):
    pass


class FeatureFormatError(ValueError):
    pass


class BadMagicError(FeatureFormatError):
    pass


class TruncatedFileError(FeatureFormatError):
    pass


class DimensionMismatchError(FeatureFormatError):
    pass


def is_charset_valid(word: str) -> bool:
    return bool(word) and all(c in CHAR_INDEX and c != " " for c in word)


def check_tokens(tokens: Sequence[str]) -> None:
    for w in tokens:
        if not is_charset_valid(w):
            raise CharsetError(f"token {w!r} has characters outside the charset")


def tokens_to_string(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def encode(text: str) -> np.ndarray:
    """Charset indices of a character string (0-based, no blank offset)."""
    try:
        return np.array([CHAR_INDEX[c] for c in text], dtype=np.int64)
    except KeyError as exc:
        raise CharsetError(f"character {exc.args[0]!r} not in charset") from None


@dataclass(frozen=True)
class VoiceProfile:
    dim: int = 16
    noise_sigma: float = 0.3
    dur_min: int = 2
    dur_max: int = 5
    channel_sigma: float = 0.05
    crossfade: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise ValueError("need 1 <= dur_min <= dur_max")
        if self.noise_sigma < 0 or self.channel_sigma < 0:
            raise ValueError("noise scales must be non-negative")

    @cached_property
    def prototypes(self) -> np.ndarray:
        # redraw until nearest-prototype classification clears 95% at this noise level
        best, best_acc = None, -1.0
        for attempt in range(50):
            protos = keyed_rng(self.seed, "prototypes", str(attempt)).standard_normal(
                (N_CHARS, self.dim)
            )
            if self.noise_sigma == 0:
                return protos
            acc = prototype_accuracy(protos, self.noise_sigma, keyed_rng(self.seed, "check"))
            if acc > 0.95:
                return protos
            if acc > best_acc:
                best, best_acc = protos, acc
        return best


def nearest_prototype(frames: np.ndarray, protos: np.ndarray) -> np.ndarray:
    d2 = (
        (frames**2).sum(1)[:, None]
        - 2.0 * frames @ protos.T
        + (protos**2).sum(1)[None, :]
    )
    return d2.argmin(1)


def prototype_accuracy(protos, noise_sigma, rng, n_per_symbol=200) -> float:
    labels = np.repeat(np.arange(len(protos)), n_per_symbol)
    frames = protos[labels] + noise_sigma * rng.standard_normal((len(labels), protos.shape[1]))
    return float((nearest_prototype(frames, protos) == labels).mean())


@dataclass
class FeatureSequence:
    frames: np.ndarray
    utterance_id: str = ""
    gold: list = field(default_factory=list)
    durations: np.ndarray | None = None  # frames per character; in-memory only

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class Utterance:
    id: str
    tokens: list
    start_s: float = 0.0
    end_s: float = 0.0
    audio_path: str | None = None
    frames: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def text(self) -> str:
        return tokens_to_string(self.tokens)


def sample_sentence(vocab, len_min, len_max, rng, weights=None) -> list[str]:
    if len(vocab) == 0:
        raise ValueError("empty vocabulary")
    if not 1 <= len_min <= len_max:
        raise ValueError("need 1 <= len_min <= len_max")
    n = int(rng.integers(len_min, len_max + 1))
    p = None
    if weights is not None:
        p = np.asarray(weights, dtype=float)
        p = p / p.sum()
    idx = rng.choice(len(vocab), size=n, p=p)
    return [vocab[i] for i in idx]


def render_features(tokens: Sequence[str], voice: VoiceProfile, rng, utterance_id="") -> FeatureSequence:
    if not tokens:
        raise ValueError("cannot render an empty transcript")
    check_tokens(tokens)
    chars = encode(tokens_to_string(tokens))
    durs = rng.integers(voice.dur_min, voice.dur_max + 1, size=len(chars))
    protos = voice.prototypes
    frames = np.repeat(protos[chars], durs, axis=0)
    frames = frames + voice.noise_sigma * rng.standard_normal(frames.shape)
    frames = frames + voice.channel_sigma * rng.standard_normal(voice.dim)[None, :]
    if voice.crossfade:
        starts = np.concatenate([[0], np.cumsum(durs)[:-1]])
        for s in starts[1:]:
            frames[s] = 0.5 * (frames[s] + frames[s - 1])
    return FeatureSequence(frames.astype(np.float32), utterance_id, list(tokens), durs)


# -- feature files -----------------------------------------------------------


def write_features(path, fs: FeatureSequence) -> None:
    frames = np.ascontiguousarray(fs.frames, dtype="<f4")
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise TruncatedFileError(f"{path}: refusing to write T=0 features")
    T, dim = frames.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, T, dim))
        f.write(frames.tobytes())


def read_features(path, dim: int | None = None) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: truncated header")
    _, version, T, d = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if T < 1 or d < 1:
        raise TruncatedFileError(f"{path}: empty feature matrix (T={T}, dim={d})")
    if dim is not None and d != dim:
        raise DimensionMismatchError(f"{path}: dim {d}, expected {dim}")
    need = _HEADER.size + 4 * T * d
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, expected {need}")
    if len(raw) > need:
        raise DimensionMismatchError(f"{path}: {len(raw) - need} trailing bytes")
    frames = np.frombuffer(raw, dtype="<f4", count=T * d, offset=_HEADER.size).reshape(T, d)
    return FeatureSequence(frames.astype(np.float32), Path(path).stem)


# -- manifests ---------------------------------------------------------------


def write_manifest(path, utts: Sequence[Utterance]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for u in utts:
            row = {
                "id": u.id,
                "audio_path": u.audio_path,
                "text": u.text,
                "start_s": u.start_s,
                "end_s": u.end_s,
            }
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_manifest(path, load_frames: bool = False) -> list[Utterance]:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                u = Utterance(
                    row["id"],
                    normalize(row["text"]),
                    float(row.get("start_s", 0.0)),
                    float(row.get("end_s", 0.0)),
                    row.get("audio_path"),
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest row ({exc})") from None
            if load_frames and u.audio_path:
                u.frames = read_features(path.parent / u.audio_path).frames
            out.append(u)
    return out


# -- corpora -----------------------------------------------------------------


@dataclass
class CorpusSpec:
    n_utts: int
    vocab: list
    voice: VoiceProfile = field(default_factory=VoiceProfile)
    seed: int = 0
    len_min: int = 3
    len_max: int = 8
    prefix: str = "utt"
    weights: list | None = None


def make_utterance(spec: CorpusSpec, i: int) -> Utterance:
    uid = f"{spec.prefix}{i:05d}"
    rng = keyed_rng(spec.seed, uid)
    tokens = sample_sentence(spec.vocab, spec.len_min, spec.len_max, rng, spec.weights)
    fs = render_features(tokens, spec.voice, rng, uid)
    return Utterance(uid, tokens, 0.0, fs.T / FRAME_RATE, None, fs.frames)


def generate_corpus(spec: CorpusSpec, out_dir=None) -> list[Utterance]:
    """Sample `n_utts` sentences and render their frames; optionally write them to disk."""
    if spec.n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    utts = [make_utterance(spec, i) for i in range(spec.n_utts)]
    if out_dir is not None:
        save_corpus(utts, out_dir)
    return utts


def save_corpus(utts: Sequence[Utterance], out_dir) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "feats").mkdir(parents=True, exist_ok=True)
    for u in utts:
        if u.frames is not None:
            rel = f"feats/{u.id}.wspf"
            write_features(out_dir / rel, FeatureSequence(u.frames, u.id, u.tokens))
            u.audio_path = rel
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, utts)
    return manifest
