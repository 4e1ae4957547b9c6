"""Small CTC recognizer: dense ReLU layer, tanh recurrence, affine output.

The model consumes cepstral feature rows and emits one logit row per
frame. Feature normalization constants are measured on the training
corpus and frozen into the model so attack-time features are normalized
identically. Forward and backward passes are pure; training mutates a
single model instance and is deterministic given its seed.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from offsetadv.audio import AudioClip
from offsetadv.ctc import (
    Alphabet,
    _loss_and_grad,
    ctc_loss,
    greedy_decode,
    required_frames,
)
from offsetadv.frontend import FrontendConfig, mfcc

_CKPT_MAGIC = b"OADVCKPT"
_CKPT_VERSION = 1

# checkpoint serialization order
PARAM_FIELDS = ("dense_w", "dense_b", "rec_w_in", "rec_w_hid", "rec_b", "out_w", "out_b")
_STAT_FIELDS = ("feat_mean", "feat_std")


class CheckpointFormatError(ValueError):
    """Raised for unreadable or version-mismatched model checkpoints."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class AcousticModel:
    alphabet: Alphabet
    hidden_size: int
    dense_w: np.ndarray  # hidden x num_ceps
    dense_b: np.ndarray  # hidden
    rec_w_in: np.ndarray  # hidden x hidden
    rec_w_hid: np.ndarray  # hidden x hidden
    rec_b: np.ndarray  # hidden
    out_w: np.ndarray  # classes x hidden
    out_b: np.ndarray  # classes
    feat_mean: np.ndarray  # num_ceps
    feat_std: np.ndarray  # num_ceps

    def __post_init__(self) -> None:
        h, f = self.hidden_size, self.num_ceps
        c = self.alphabet.num_classes
        shapes = {
            "dense_w": (h, f), "dense_b": (h,),
            "rec_w_in": (h, h), "rec_w_hid": (h, h), "rec_b": (h,),
            "out_w": (c, h), "out_b": (c,),
            "feat_mean": (f,), "feat_std": (f,),
        }
        if h < 1:
            raise ValueError("hidden_size must be at least 1")
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    @property
    def num_ceps(self) -> int:
        return np.asarray(self.dense_w).shape[1]

    def copy(self) -> "AcousticModel":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    # per-step data augmentation: random leading zeros up to this many
    # samples (plus up to one hop of trailing zeros), so the recognizer
    # treats digital silence as blank and tolerates arbitrary offsets the
    # way a production recognizer does; 0 disables
    silence_pad_max: int = 960

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.silence_pad_max < 0:
            raise ValueError("silence_pad_max must be non-negative")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    heldout_exact_match: float


def initialize_model(
    alphabet: Alphabet, num_ceps: int, hidden_size: int = 64, seed: int = 0
) -> AcousticModel:
    """Fresh model with all parameters uniform in (-0.1, 0.1)."""
    rng = np.random.default_rng(seed)
    h, f, c = hidden_size, num_ceps, alphabet.num_classes

    def u(*shape):
        return rng.uniform(-0.1, 0.1, shape)

    return AcousticModel(
        alphabet=alphabet,
        hidden_size=h,
        dense_w=u(h, f), dense_b=u(h),
        rec_w_in=u(h, h), rec_w_hid=u(h, h), rec_b=u(h),
        out_w=u(c, h), out_b=u(c),
        feat_mean=np.zeros(f), feat_std=np.ones(f),
    )


def _check_features(model: AcousticModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.num_ceps:
        raise ValueError(
            f"features must be frames x {model.num_ceps}, got {features.shape}"
        )
    return features


def _run(model: AcousticModel, features: np.ndarray) -> dict:
    """Forward pass keeping the intermediates needed for backprop."""
    f_norm = (features - model.feat_mean) / model.feat_std
    dense_pre = f_norm @ model.dense_w.T + model.dense_b
    u = np.maximum(dense_pre, 0.0)
    t_max = features.shape[0]
    rec_in = u @ model.rec_w_in.T + model.rec_b  # input drive, all frames at once
    h_seq = np.zeros((t_max, model.hidden_size))
    h = np.zeros(model.hidden_size)
    for t in range(t_max):
        h = np.tanh(rec_in[t] + model.rec_w_hid @ h)
        h_seq[t] = h
    logits = h_seq @ model.out_w.T + model.out_b
    return {"f_norm": f_norm, "dense_pre": dense_pre, "u": u, "h_seq": h_seq, "logits": logits}


def forward(model: AcousticModel, features: np.ndarray) -> np.ndarray:
    """Per-frame logits (frames x num classes) for a feature matrix."""
    features = _check_features(model, features)
    return _run(model, features)["logits"]


def _backward(model: AcousticModel, features: np.ndarray, upstream: np.ndarray,
              want_params: bool, cache: dict | None = None):
    features = _check_features(model, features)
    upstream = np.asarray(upstream, dtype=np.float64)
    if cache is None:
        cache = _run(model, features)
    logits = cache["logits"]
    if upstream.shape != logits.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match logits {logits.shape}"
        )
    t_max = features.shape[0]
    h_seq, u, dense_pre, f_norm = cache["h_seq"], cache["u"], cache["dense_pre"], cache["f_norm"]

    # backprop through time; only the hidden-state carry is sequential
    g_h_direct = upstream @ model.out_w
    g_pre = np.zeros_like(h_seq)
    carry = np.zeros(model.hidden_size)
    w_hid_t = model.rec_w_hid.T
    for t in range(t_max - 1, -1, -1):
        g_pre[t] = (g_h_direct[t] + carry) * (1.0 - h_seq[t] ** 2)
        carry = w_hid_t @ g_pre[t]

    g_u = g_pre @ model.rec_w_in
    g_dense_pre = g_u * (dense_pre > 0.0)
    g_feat = (g_dense_pre @ model.dense_w) / model.feat_std

    grads = None
    if want_params:
        h_prev = np.vstack([np.zeros(model.hidden_size), h_seq[:-1]])
        grads = {
            "out_w": upstream.T @ h_seq,
            "out_b": upstream.sum(axis=0),
            "rec_w_in": g_pre.T @ u,
            "rec_w_hid": g_pre.T @ h_prev,
            "rec_b": g_pre.sum(axis=0),
            "dense_w": g_dense_pre.T @ f_norm,
            "dense_b": g_dense_pre.sum(axis=0),
        }
    return g_feat, grads


def backward_to_input(model: AcousticModel, features: np.ndarray,
                      upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product onto the feature matrix; parameters untouched."""
    g_feat, _ = _backward(model, features, upstream, want_params=False)
    return g_feat


def backward_to_params(model: AcousticModel, features: np.ndarray,
                       upstream: np.ndarray) -> dict:
    """Parameter gradients keyed by field name (see PARAM_FIELDS)."""
    _, grads = _backward(model, features, upstream, want_params=True)
    return grads


def transcribe(model: AcousticModel, clip: AudioClip, frontend: FrontendConfig) -> str:
    """Greedy transcription of a clip through the full pipeline."""
    return greedy_decode(forward(model, mfcc(clip, frontend)), model.alphabet)


def utterance_gradient(model: AcousticModel, clip: AudioClip, transcript: str,
                       frontend: FrontendConfig) -> tuple[float, dict]:
    """CTC loss of one utterance and its parameter gradients."""
    target = model.alphabet.encode(transcript)
    features = _check_features(model, mfcc(clip, frontend))
    cache = _run(model, features)
    loss, g_logits = _loss_and_grad(cache["logits"], target, model.alphabet)
    _, grads = _backward(model, features, g_logits, want_params=True, cache=cache)
    return loss, grads


def corpus_loss(model: AcousticModel, corpus, frontend: FrontendConfig) -> float:
    """Mean per-utterance CTC loss over a corpus."""
    total = 0.0
    for clip, transcript in corpus:
        target = model.alphabet.encode(transcript)
        total += ctc_loss(forward(model, mfcc(clip, frontend)), target, model.alphabet)
    return total / len(corpus)


def evaluate_exact_match(model: AcousticModel, corpus, frontend: FrontendConfig) -> float:
    """Fraction of utterances whose greedy decode equals the transcript."""
    if not corpus:
        return 0.0
    hits = sum(1 for clip, text in corpus if transcribe(model, clip, frontend) == text)
    return hits / len(corpus)


def _augment(clip: AudioClip, rng: np.random.Generator, pad_max: int,
             hop: int) -> AudioClip:
    lead = int(rng.integers(0, pad_max + 1))
    trail = int(rng.integers(0, hop + 1))
    if lead == 0 and trail == 0:
        return clip
    samples = np.concatenate([np.zeros(lead), clip.samples, np.zeros(trail)])
    return AudioClip(samples, clip.sample_rate)


def train(model: AcousticModel, corpus, cfg: TrainConfig, frontend: FrontendConfig,
          heldout=()) -> tuple[AcousticModel, list[EpochStats]]:
    """Plain SGD on summed CTC loss; returns the epoch snapshot with the
    best held-out exact-match rate (ties keep the earlier epoch).

    Feature normalization constants are measured on the training corpus
    and frozen into the model before the first update. Each step sees the
    utterance with fresh random silence padding so the recognizer learns
    to ignore digital silence and arbitrary offsets.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    for clip, transcript in corpus:
        target = model.alphabet.encode(transcript)
        if required_frames(target) > frontend.frame_count(len(clip)):
            raise ValueError(
                f"transcript {transcript!r} cannot align with a "
                f"{len(clip)}-sample clip"
            )

    all_feats = np.concatenate([mfcc(clip, frontend) for clip, _ in corpus])
    model.feat_mean = all_feats.mean(axis=0)
    model.feat_std = np.maximum(all_feats.std(axis=0), 1e-8)

    rng = np.random.default_rng(cfg.seed)
    eval_set = heldout if len(heldout) else corpus
    best = model.copy()
    best_rate = -1.0
    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = {name: np.zeros_like(getattr(model, name)) for name in PARAM_FIELDS}
            for idx in batch:
                clip, transcript = corpus[idx]
                if cfg.silence_pad_max:
                    clip = _augment(clip, rng, cfg.silence_pad_max, frontend.hop_size)
                loss, g = utterance_gradient(model, clip, transcript, frontend)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, utterance {idx}"
                    )
                for name in PARAM_FIELDS:
                    grads[name] += g[name]
            for name in PARAM_FIELDS:
                updated = getattr(model, name) - cfg.learning_rate * grads[name]
                if not np.all(np.isfinite(updated)):
                    raise TrainingDivergedError(
                        f"non-finite parameter {name} at epoch {epoch}"
                    )
                setattr(model, name, updated)
        train_loss = corpus_loss(model, corpus, frontend)
        rate = evaluate_exact_match(model, eval_set, frontend)
        history.append(EpochStats(epoch, train_loss, rate))
        if rate > best_rate:
            best_rate = rate
            best = model.copy()
    return best, history


def save_model(model: AcousticModel, path) -> None:
    """Write a versioned binary checkpoint.

    Layout: magic, version, hidden size, cepstra count, blank index,
    length-prefixed UTF-8 symbols, then feat_mean, feat_std and the
    parameter arrays in PARAM_FIELDS order as little-endian float64.
    """
    symbols = model.alphabet.symbols.encode("utf-8")
    header = _CKPT_MAGIC + struct.pack(
        "<IIIII",
        _CKPT_VERSION,
        model.hidden_size,
        model.num_ceps,
        model.alphabet.blank_index,
        len(symbols),
    )
    blobs = [getattr(model, name).astype("<f8").tobytes()
             for name in _STAT_FIELDS + PARAM_FIELDS]
    with open(path, "wb") as fh:
        fh.write(header + symbols + b"".join(blobs))


def load_model(path) -> AcousticModel:
    """Read a checkpoint written by save_model; rejects other versions."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(_CKPT_MAGIC) + 20 or not data.startswith(_CKPT_MAGIC):
        raise CheckpointFormatError(f"{path}: not a model checkpoint")
    version, hidden, num_ceps, blank, sym_len = struct.unpack_from(
        "<IIIII", data, len(_CKPT_MAGIC)
    )
    if version != _CKPT_VERSION:
        raise CheckpointFormatError(
            f"{path}: checkpoint version {version} is not supported "
            f"(expected {_CKPT_VERSION})"
        )
    pos = len(_CKPT_MAGIC) + 20
    symbols = data[pos : pos + sym_len].decode("utf-8")
    pos += sym_len
    alphabet = Alphabet(symbols, blank)
    c = alphabet.num_classes
    shapes = {
        "feat_mean": (num_ceps,), "feat_std": (num_ceps,),
        "dense_w": (hidden, num_ceps), "dense_b": (hidden,),
        "rec_w_in": (hidden, hidden), "rec_w_hid": (hidden, hidden), "rec_b": (hidden,),
        "out_w": (c, hidden), "out_b": (c,),
    }
    arrays = {}
    for name in _STAT_FIELDS + PARAM_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        blob = data[pos : pos + 8 * count]
        if len(blob) != 8 * count:
            raise CheckpointFormatError(f"{path}: truncated parameter data ({name})")
        arrays[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        pos += 8 * count
    if pos != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return AcousticModel(alphabet=alphabet, hidden_size=hidden, **arrays)
