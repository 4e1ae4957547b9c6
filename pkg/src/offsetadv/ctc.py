"""Connectionist Temporal Classification: loss, logit gradient, greedy decode.

The loss sums the probability of every frame-level alignment that
collapses (repeat merging, blank removal) to the target. All recursions
run in log space; the loss is summed over the utterance, not averaged,
which matters for gradient magnitudes downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEG_INF = -np.inf


class TargetTooLongError(ValueError):
    """Target cannot be aligned: it needs more frames than are available."""


@dataclass(frozen=True)
class Alphabet:
    """Ordered output symbols plus the blank.

    Symbol i maps to logit column i; the blank occupies the final column
    (index len(symbols)), so logits have len(symbols) + 1 columns.
    """

    symbols: str
    blank_index: int = field(default=-1)

    def __post_init__(self) -> None:
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")
        if not self.symbols:
            raise ValueError("alphabet must contain at least one symbol")
        if self.blank_index == -1:
            object.__setattr__(self, "blank_index", len(self.symbols))
        if self.blank_index != len(self.symbols):
            raise ValueError("blank must occupy the final logit column")

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> np.ndarray:
        """Map a transcript to symbol indices; unknown characters raise."""
        try:
            return np.array([self.symbols.index(c) for c in text], dtype=np.intp)
        except ValueError:
            unknown = next(c for c in text if c not in self.symbols)
            raise ValueError(f"character {unknown!r} is not in the alphabet") from None

    def decode_indices(self, indices) -> str:
        return "".join(self.symbols[i] for i in indices)


def required_frames(target: np.ndarray) -> int:
    """Minimum frames an alignment needs: target length plus one blank
    between each pair of repeated adjacent symbols."""
    target = np.asarray(target)
    if target.size == 0:
        return 0
    return int(target.size + np.count_nonzero(target[1:] == target[:-1]))


def _check_inputs(logits: np.ndarray, target: np.ndarray, alphabet: Alphabet) -> tuple:
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.intp)
    if logits.ndim != 2 or logits.shape[1] != alphabet.num_classes:
        raise ValueError(
            f"logits must be frames x {alphabet.num_classes}, got {logits.shape}"
        )
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if target.size == 0:
        raise ValueError("target must be non-empty")
    if np.any(target < 0) or np.any(target >= len(alphabet.symbols)):
        raise ValueError("target indices must refer to non-blank symbols")
    need = required_frames(target)
    if need > logits.shape[0]:
        raise TargetTooLongError(
            f"target needs at least {need} frames but logits have {logits.shape[0]}"
        )
    return logits, target


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def _augmented(target: np.ndarray, blank: int) -> tuple[np.ndarray, np.ndarray]:
    """Blank-interleaved label sequence and the skip-transition mask."""
    s = 2 * target.size + 1
    labels = np.full(s, blank, dtype=np.intp)
    labels[1::2] = target
    can_skip = np.zeros(s, dtype=bool)
    # a jump over the preceding blank is allowed into a non-blank state
    # that differs from the previous non-blank state
    can_skip[3::2] = target[1:] != target[:-1]
    return labels, can_skip


def _forward_backward(log_probs: np.ndarray, labels: np.ndarray, can_skip: np.ndarray):
    """Log-space alpha/beta lattices over the augmented label states.

    alpha[t, s] includes the emission at frame t; beta[t, s] covers frames
    t+1 onward, so total path probability is logsumexp(alpha[t] + beta[t])
    at any t.
    """
    t_max, s_max = log_probs.shape[0], labels.size
    lp = log_probs[:, labels]  # frames x states
    skip_into = np.nonzero(can_skip)[0]  # states reachable by a two-step jump

    alpha = np.full((t_max, s_max), NEG_INF)
    alpha[0, 0] = lp[0, 0]
    if s_max > 1:
        alpha[0, 1] = lp[0, 1]
    work = np.empty(s_max)
    for t in range(1, t_max):
        prev = alpha[t - 1]
        work[0] = prev[0]
        np.logaddexp(prev[1:], prev[:-1], out=work[1:])
        if skip_into.size:
            work[skip_into] = np.logaddexp(work[skip_into], prev[skip_into - 2])
        np.add(work, lp[t], out=alpha[t])

    beta = np.full((t_max, s_max), NEG_INF)
    beta[t_max - 1, s_max - 1] = 0.0
    if s_max > 1:
        beta[t_max - 1, s_max - 2] = 0.0
    skip_from = skip_into - 2
    for t in range(t_max - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1]
        work[s_max - 1] = nxt[s_max - 1]
        np.logaddexp(nxt[:-1], nxt[1:], out=work[:-1])
        if skip_from.size:
            work[skip_from] = np.logaddexp(work[skip_from], nxt[skip_from + 2])
        beta[t] = work

    log_total = np.logaddexp(
        alpha[t_max - 1, s_max - 1],
        alpha[t_max - 1, s_max - 2] if s_max > 1 else NEG_INF,
    )
    return alpha, beta, log_total


def _loss_and_grad(logits: np.ndarray, target, alphabet: Alphabet) -> tuple:
    """Loss and logit gradient from one forward-backward pass."""
    logits, target = _check_inputs(logits, target, alphabet)
    labels, can_skip = _augmented(target, alphabet.blank_index)
    log_probs = _log_softmax(logits)
    alpha, beta, log_total = _forward_backward(log_probs, labels, can_skip)

    # state occupancy normalized by total path probability
    occupancy = np.exp(alpha + beta - log_total)
    label_posterior = np.zeros_like(logits)
    np.add.at(label_posterior, (slice(None), labels), occupancy)
    return float(-log_total), np.exp(log_probs) - label_posterior


def ctc_loss(logits: np.ndarray, target, alphabet: Alphabet) -> float:
    """Negative log probability of all alignments that collapse to target."""
    logits, target = _check_inputs(logits, target, alphabet)
    labels, can_skip = _augmented(target, alphabet.blank_index)
    _, _, log_total = _forward_backward(_log_softmax(logits), labels, can_skip)
    return float(-log_total)


def ctc_grad(logits: np.ndarray, target, alphabet: Alphabet) -> np.ndarray:
    """Gradient of ctc_loss with respect to the logits (same shape).

    Computed from forward-backward state posteriors; each row sums to zero
    because the loss depends on logits only through per-frame softmaxes.
    """
    return _loss_and_grad(logits, target, alphabet)[1]


def greedy_decode(logits: np.ndarray, alphabet: Alphabet) -> str:
    """Best-path decode: per-frame argmax, merge repeats, drop blanks.

    Argmax ties resolve to the lowest index, making the decode
    deterministic. The empty string is a legitimate result.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] != alphabet.num_classes:
        raise ValueError(
            f"logits must be frames x {alphabet.num_classes}, got {logits.shape}"
        )
    path = np.argmax(logits, axis=1)
    out = []
    previous = -1
    for idx in path:
        if idx != previous and idx != alphabet.blank_index:
            out.append(alphabet.symbols[idx])
        previous = idx
    return "".join(out)
