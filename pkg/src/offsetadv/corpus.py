"""Deterministic synthetic speech-like corpus.

Each character is a short harmonic tone at its own fundamental (space is
silence), so utterances are acoustically separable and a small recognizer
can learn them to near-perfect accuracy in minutes. Everything derives
from the spec seed: regenerating a corpus reproduces it bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from offsetadv.audio import AudioClip, load_wav, save_wav

# char_duration must stay a multiple of this so character boundaries land
# on bucket boundaries of the default front end
DEFAULT_HOP = 320

SAMPLE_RATE = 16000

# distinct fundamentals, chosen so the third harmonic stays under Nyquist
DEFAULT_CHAR_FREQUENCIES = MappingProxyType({
    "a": 200.0, "b": 300.0, "c": 420.0, "d": 560.0, "e": 730.0,
    "f": 940.0, "g": 1200.0, "h": 1520.0, "i": 1900.0, "j": 2400.0,
})

_HARMONIC_AMPLITUDES = (1.0, 0.5, 0.25)
_PEAK = 8000.0  # quarter of PCM full scale


class UnknownCharacterError(ValueError):
    """A transcript character has no configured fundamental frequency."""


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    num_utterances: int = 500
    chars_per_utterance: tuple[int, int] = (3, 8)
    char_duration: int = 3200  # samples (0.2 s at 16 kHz)
    noise_level: float = 0.02  # Gaussian sigma relative to unit tone amplitude
    char_frequencies: MappingProxyType = field(default=DEFAULT_CHAR_FREQUENCIES)

    def __post_init__(self) -> None:
        lo, hi = self.chars_per_utterance
        if not 1 <= lo <= hi:
            raise ValueError("chars_per_utterance must be an increasing positive range")
        if self.num_utterances < 1:
            raise ValueError("num_utterances must be positive")
        if self.char_duration < 1 or self.char_duration % DEFAULT_HOP:
            raise ValueError(f"char_duration must be a positive multiple of {DEFAULT_HOP}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        freqs = list(self.char_frequencies.values())
        if len(set(freqs)) != len(freqs):
            raise ValueError("character frequencies must be distinct")
        nyquist = SAMPLE_RATE / 2
        for ch, f in self.char_frequencies.items():
            if not 100.0 < f < nyquist:
                raise ValueError(f"frequency for {ch!r} must lie in (100, {nyquist}) Hz")
        object.__setattr__(self, "char_frequencies",
                           MappingProxyType(dict(self.char_frequencies)))

    @property
    def text_alphabet(self) -> str:
        """Characters utterances are built from: mapped chars plus space."""
        return "".join(sorted(self.char_frequencies)) + " "


@dataclass(frozen=True)
class Corpus:
    train: tuple
    heldout: tuple

    @property
    def all_entries(self) -> tuple:
        return self.train + self.heldout


def render_utterance(text: str, spec: CorpusSpec, seed: int) -> AudioClip:
    """Render a transcript as audio: one enveloped tone per character.

    Each non-space character contributes its fundamental plus two
    harmonics at amplitudes 1, 0.5, 0.25 under a Hann envelope; spaces
    are silent. Seeded Gaussian noise is added over the whole utterance
    and the result is scaled to an 8000-sample peak.
    """
    if not text:
        raise ValueError("cannot render an empty transcript")
    n = spec.char_duration
    t = np.arange(n) / SAMPLE_RATE
    envelope = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))
    segments = []
    for ch in text:
        if ch == " ":
            segments.append(np.zeros(n))
            continue
        if ch not in spec.char_frequencies:
            raise UnknownCharacterError(f"no frequency configured for character {ch!r}")
        fundamental = spec.char_frequencies[ch]
        tone = np.zeros(n)
        for k, amp in enumerate(_HARMONIC_AMPLITUDES, start=1):
            tone += amp * np.sin(2.0 * np.pi * fundamental * k * t)
        segments.append(tone * envelope)
    signal = np.concatenate(segments)
    if spec.noise_level:
        signal = signal + np.random.default_rng(seed).normal(0.0, spec.noise_level,
                                                             signal.size)
    peak = np.max(np.abs(signal))
    if peak > 0:
        signal = signal * (_PEAK / peak)
    return AudioClip(signal, SAMPLE_RATE)


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Random utterances under the spec, split 90/10 into train/held-out.

    Per-utterance render seeds derive from the spec seed, so the corpus
    is reproducible as a whole and utterance by utterance.
    """
    rng = np.random.default_rng(spec.seed)
    alphabet = spec.text_alphabet
    lo, hi = spec.chars_per_utterance
    entries = []
    for i in range(spec.num_utterances):
        length = int(rng.integers(lo, hi + 1))
        text = "".join(alphabet[j] for j in rng.integers(0, len(alphabet), length))
        entries.append((render_utterance(text, spec, seed=int(rng.integers(2**63))), text))
    order = rng.permutation(spec.num_utterances)
    n_heldout = max(1, spec.num_utterances // 10)
    heldout_idx = set(order[:n_heldout].tolist())
    train = tuple(e for i, e in enumerate(entries) if i not in heldout_idx)
    heldout = tuple(e for i, e in enumerate(entries) if i in heldout_idx)
    return Corpus(train=train, heldout=heldout)


def write_corpus(corpus: Corpus, directory) -> Path:
    """Write WAVs plus a manifest CSV (path, transcript, split)."""
    directory = Path(directory)
    (directory / "wavs").mkdir(parents=True, exist_ok=True)
    rows = []
    index = 0
    for split, entries in (("train", corpus.train), ("heldout", corpus.heldout)):
        for clip, text in entries:
            rel = f"wavs/utt_{index:04d}.wav"
            save_wav(clip, directory / rel)
            rows.append((rel, text, split))
            index += 1
    manifest = directory / "manifest.csv"
    with open(manifest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "transcript", "split"])
        writer.writerows(rows)
    return manifest


def load_corpus(directory) -> Corpus:
    """Read a corpus back from its manifest."""
    directory = Path(directory)
    train, heldout = [], []
    with open(directory / "manifest.csv", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["path", "transcript", "split"]:
            raise ValueError(f"unexpected manifest header: {header}")
        for rel, text, split in reader:
            entry = (load_wav(directory / rel), text)
            (train if split == "train" else heldout).append(entry)
    return Corpus(train=tuple(train), heldout=tuple(heldout))
