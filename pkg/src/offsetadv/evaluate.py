"""Offset sweeps, Levenshtein distance, simulated noisy channel, reports.

Edit distances are reported raw (not normalized by target length) with
the target length alongside, so different settings can be compared either
way. Channel trials stand in for playing and re-recording a clip: a
random delay, additive noise at a configured SNR, and an optional
band-pass for speaker/microphone frequency limits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import firwin

from offsetadv.audio import AudioClip, prepend_silence
from offsetadv.frontend import FrontendConfig
from offsetadv.model import AcousticModel, transcribe

_BANDPASS_TAPS = 255


@dataclass(frozen=True)
class SweepReport:
    """Edit distance to the target per prepended-silence offset."""

    offsets: tuple
    distances: tuple
    target: str
    decoded: tuple

    def __post_init__(self) -> None:
        if not (len(self.offsets) == len(self.distances) == len(self.decoded)):
            raise ValueError("offsets, distances and decoded must be parallel")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValueError("offsets must be strictly increasing")
        object.__setattr__(self, "offsets", tuple(int(o) for o in self.offsets))
        object.__setattr__(self, "distances", tuple(int(d) for d in self.distances))
        object.__setattr__(self, "decoded", tuple(self.decoded))


@dataclass(frozen=True)
class ChannelTrial:
    trial: int
    offset_drawn: int
    snr_db_measured: float
    edit_distance: int
    decoded: str


@dataclass(frozen=True)
class ChannelReport:
    target: str
    trials: tuple
    mean_distance: float


@dataclass(frozen=True)
class ChannelConfig:
    """Simulated playback channel; math.inf disables the noise."""

    noise_snr_db: float = 20.0
    random_offset_range: int = 800
    bandpass: tuple | None = (100.0, 7500.0)
    trials: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if math.isnan(self.noise_snr_db):
            raise ValueError("noise_snr_db must not be NaN")
        if self.random_offset_range < 1:
            raise ValueError("random_offset_range must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.bandpass is not None:
            low, high = self.bandpass
            if not 0 < low < high:
                raise ValueError("bandpass must satisfy 0 < low < high")


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance: unit-cost insertions, deletions, substitutions."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[len(b)]


def offset_sweep(adv: AudioClip, model: AcousticModel, frontend: FrontendConfig,
                 target: str, max_offset: int = 800, step: int = 1) -> SweepReport:
    """Decode the clip with 0, step, 2*step, ... prepended zero samples
    and record the edit distance to the target at each offset."""
    if max_offset < 0 or step < 1:
        raise ValueError("need max_offset >= 0 and step >= 1")
    offsets = list(range(0, max_offset + 1, step))
    decoded = [transcribe(model, prepend_silence(adv, r), frontend) for r in offsets]
    distances = [edit_distance(d, target) for d in decoded]
    return SweepReport(tuple(offsets), tuple(distances), target, tuple(decoded))


def _bandpass_taps(low: float, high: float, sample_rate: int) -> np.ndarray:
    nyquist = sample_rate / 2
    if not high < nyquist:
        raise ValueError(f"bandpass high edge {high} must be below Nyquist {nyquist}")
    return firwin(_BANDPASS_TAPS, [low, high], pass_zero=False, fs=sample_rate)


def simulate_channel(adv: AudioClip, cfg: ChannelConfig) -> list[AudioClip]:
    """Independent noisy-playback variants of a clip, one per trial.

    Per trial: prepend a random offset drawn from [0, random_offset_range),
    add Gaussian noise scaled to the configured SNR against the clean
    clip's power, apply the linear-phase windowed-sinc band-pass if
    configured, and clamp to the PCM range. The drawn offset is
    recoverable as len(trial) - len(adv).
    """
    rng = np.random.default_rng(cfg.seed)
    signal_power = float(np.mean(adv.samples ** 2))
    taps = None
    if cfg.bandpass is not None:
        taps = _bandpass_taps(*cfg.bandpass, adv.sample_rate)
    out = []
    for _ in range(cfg.trials):
        offset = int(rng.integers(0, cfg.random_offset_range))
        samples = prepend_silence(adv, offset).samples.copy()
        if math.isfinite(cfg.noise_snr_db):
            if signal_power == 0.0:
                raise ValueError("cannot scale noise against an all-zero clip")
            sigma = math.sqrt(signal_power / 10.0 ** (cfg.noise_snr_db / 10.0))
            samples += rng.normal(0.0, sigma, samples.size)
        if taps is not None:
            samples = np.convolve(samples, taps, mode="same")
        samples = np.clip(samples, -32767.0, 32767.0)
        out.append(AudioClip(samples, adv.sample_rate))
    return out


def channel_evaluation(adv: AudioClip, model: AcousticModel,
                       frontend: FrontendConfig, target: str,
                       cfg: ChannelConfig) -> ChannelReport:
    """Decode every simulated trial and average the edit distances.

    The mean is raw (not normalized by target length). Measured SNR per
    trial compares the clean clip's power against everything the channel
    added or distorted.
    """
    trials = simulate_channel(adv, cfg)
    rows = []
    for i, trial_clip in enumerate(trials):
        offset = len(trial_clip) - len(adv)
        residual = trial_clip.samples - prepend_silence(adv, offset).samples
        residual_power = float(np.mean(residual ** 2))
        if residual_power > 0:
            snr = 10.0 * math.log10(float(np.mean(adv.samples ** 2)) / residual_power)
        else:
            snr = math.inf
        decoded = transcribe(model, trial_clip, frontend)
        rows.append(ChannelTrial(
            trial=i,
            offset_drawn=offset,
            snr_db_measured=snr,
            edit_distance=edit_distance(decoded, target),
            decoded=decoded,
        ))
    mean = sum(r.edit_distance for r in rows) / len(rows)
    return ChannelReport(target=target, trials=tuple(rows), mean_distance=mean)


def emit_report(report, path) -> None:
    """Write a sweep or channel report as CSV with a documented header."""
    if isinstance(report, SweepReport):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["offset", "edit_distance", "decoded"])
            for row in zip(report.offsets, report.distances, report.decoded):
                writer.writerow(row)
    elif isinstance(report, ChannelReport):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["trial", "offset_drawn", "snr_db_measured",
                             "edit_distance", "decoded"])
            for r in report.trials:
                writer.writerow([r.trial, r.offset_drawn, repr(r.snr_db_measured),
                                 r.edit_distance, r.decoded])
    else:
        raise TypeError(f"cannot emit report of type {type(report).__name__}")


def read_sweep_report(path, target: str) -> SweepReport:
    """Parse a sweep CSV back into a report."""
    offsets, distances, decoded = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["offset", "edit_distance", "decoded"]:
            raise ValueError(f"unexpected sweep header: {header}")
        for off, dist, dec in reader:
            offsets.append(int(off))
            distances.append(int(dist))
            decoded.append(dec)
    return SweepReport(tuple(offsets), tuple(distances), target, tuple(decoded))


def read_channel_report(path, target: str) -> ChannelReport:
    """Parse a channel CSV back into a report."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["trial", "offset_drawn", "snr_db_measured",
                      "edit_distance", "decoded"]:
            raise ValueError(f"unexpected channel header: {header}")
        for trial, offset, snr, dist, dec in reader:
            rows.append(ChannelTrial(int(trial), int(offset), float(snr),
                                     int(dist), dec))
    mean = sum(r.edit_distance for r in rows) / len(rows)
    return ChannelReport(target=target, trials=tuple(rows), mean_distance=mean)
