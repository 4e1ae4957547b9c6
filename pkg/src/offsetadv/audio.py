"""Waveform container, mono 16-bit PCM WAV I/O, silence padding, and dB metrics.

Samples are kept at raw integer-PCM scale (magnitudes up to 32768) rather
than normalized to +-1, so decibel figures computed here line up with the
+-1000-range convention used when reporting perturbation distortion.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

# 16-bit source material; AudioClip magnitudes may not exceed this.
PCM_FULL_SCALE = 32768.0

_INT16_MIN = -32768
_INT16_MAX = 32767


class WavFormatError(ValueError):
    """Raised for files that are not mono 16-bit PCM RIFF/WAVE."""


@dataclass(frozen=True)
class AudioClip:
    """An immutable mono waveform: float64 samples at integer-PCM scale.

    The sample array is copied on construction and marked read-only, so
    clips are safe to share across threads and reuse between operations.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioClip needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        peak = np.max(np.abs(samples))
        if peak > PCM_FULL_SCALE:
            raise ValueError(
                f"sample magnitude {peak:g} exceeds PCM full scale {PCM_FULL_SCALE:g}"
            )
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    def replace_samples(self, samples: np.ndarray) -> "AudioClip":
        """New clip with the same sample rate and different samples."""
        return AudioClip(samples, self.sample_rate)


@dataclass(frozen=True)
class DistortionBound:
    """Decibel ceiling for a perturbation's peak-to-peak amplitude."""

    max_db: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.max_db):
            raise ValueError("max_db must be finite")

    def half_box(self) -> float:
        """Per-sample amplitude limit implied by the bound.

        Clamping samples to +-half_box keeps the peak-to-peak distortion
        at or below max_db by construction.
        """
        return 10.0 ** (self.max_db / 20.0) / 2.0


def load_wav(path) -> AudioClip:
    """Read a mono 16-bit PCM WAV file without rescaling the samples.

    Integer sample values are converted to float64 as-is (range +-32768).
    Raises WavFormatError with a distinct message for non-RIFF input,
    non-PCM encodings (including extensible-format headers), multi-channel
    files, and non-16-bit files.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        tag = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: truncated '{tag.decode(errors='replace')}' chunk")
        if tag == b"fmt ":
            fmt = body
        elif tag == b"data":
            pcm = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16:
        raise WavFormatError(f"{path}: missing or short fmt chunk")
    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format == 0xFFFE:
        raise WavFormatError(f"{path}: extensible-format WAV headers are not supported")
    if audio_format != 1:
        raise WavFormatError(f"{path}: unsupported non-PCM encoding (format tag {audio_format})")
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {channels} channels")
    if bits != 16:
        raise WavFormatError(f"{path}: expected 16-bit samples, got {bits}-bit")
    if pcm is None:
        raise WavFormatError(f"{path}: missing data chunk")
    if len(pcm) % 2:
        raise WavFormatError(f"{path}: data chunk has an odd byte count")

    samples = np.frombuffer(pcm, dtype="<i2").astype(np.float64)
    if samples.size == 0:
        raise WavFormatError(f"{path}: empty data chunk")
    return AudioClip(samples, sample_rate)


def save_wav(clip: AudioClip, path) -> None:
    """Write a clip as mono 16-bit PCM WAV.

    Samples are rounded half-to-even; values that round outside the
    representable int16 range are refused rather than clipped, so a
    load_wav round trip is exact up to that rounding.
    """
    ints = np.rint(clip.samples)
    lo, hi = ints.min(), ints.max()
    if lo < _INT16_MIN or hi > _INT16_MAX:
        raise ValueError(
            f"sample out of range for 16-bit PCM after rounding "
            f"(min {lo:g}, max {hi:g}); refusing to clip"
        )
    pcm = ints.astype("<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(pcm))
    with open(path, "wb") as fh:
        fh.write(header + pcm)


def pad_with_offset(x: AudioClip, r: int, total: int) -> AudioClip:
    """Surround a clip with silence: zeros(total - r) then x then zeros(r).

    The output is always exactly `total` samples longer than the input,
    regardless of where the split between leading and trailing silence
    falls. `r` must lie in 1..total.
    """
    if not 1 <= r <= total:
        raise ValueError(f"offset r={r} outside 1..{total}")
    padded = np.concatenate(
        [np.zeros(total - r), x.samples, np.zeros(r)]
    )
    return AudioClip(padded, x.sample_rate)


def prepend_silence(x: AudioClip, r: int) -> AudioClip:
    """Prepend r zero samples; existing samples are untouched."""
    if r < 0:
        raise ValueError("silence length must be non-negative")
    if r == 0:
        return x
    return AudioClip(np.concatenate([np.zeros(r), x.samples]), x.sample_rate)


def distortion_db(delta: AudioClip) -> float:
    """Peak-to-peak amplitude of a perturbation in decibels.

    Defined as 20*log10(max - min), which maps a +-1000 swing to 66.02 dB.
    A flat (all-equal) perturbation has no peak-to-peak swing and returns
    -inf as a report-only sentinel; callers must not compare it numerically.
    """
    span = float(np.max(delta.samples) - np.min(delta.samples))
    if span == 0.0:
        return float("-inf")
    return 20.0 * math.log10(span)


def samples_per_distance(distance_m: float, sample_rate: float, speed_of_sound: float) -> float:
    """How many sample periods of delay a given travel distance causes.

    At 16 kHz and 340 m/s each ~2.1 cm of extra path adds one sample of
    offset, which is why playback distance cannot be timed precisely
    enough to avoid offsets.
    """
    if distance_m < 0 or sample_rate <= 0 or speed_of_sound <= 0:
        raise ValueError("arguments must be positive (distance may be zero)")
    return distance_m / (speed_of_sound / sample_rate)
