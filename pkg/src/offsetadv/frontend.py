"""Differentiable MFCC front end: framing, windowed FFT magnitudes, mel
filterbank, log compression, DCT — plus the adjoint (vector-Jacobian
product) so gradients can flow from features back to raw samples.

Binning into hop-size buckets is what makes recognizers sensitive to
sample offsets: shifting the input by a whole hop reproduces the same
frames one index later, while any fractional shift regroups the samples
and changes every feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from offsetadv.audio import AudioClip


@dataclass(frozen=True)
class FrontendConfig:
    """Frame/hop/mel/DCT parameters of the feature pipeline.

    Defaults give 50 buckets per second at 16 kHz (hop 320) with a
    two-hop analysis window; other hop sizes (e.g. 512) are supported by
    configuration since offset sensitivity is periodic in the hop.
    """

    frame_length: int = 640
    hop_size: int = 320
    sample_rate: int = 16000
    num_mel_filters: int = 26
    num_ceps: int = 13
    log_floor: float = 1e-6

    def __post_init__(self) -> None:
        if self.hop_size <= 0:
            raise ValueError("hop_size must be positive")
        if self.frame_length < self.hop_size:
            raise ValueError("frame_length must be at least hop_size")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        n_bins = self.frame_length // 2 + 1
        if not 1 <= self.num_ceps <= self.num_mel_filters <= n_bins:
            raise ValueError(
                "need 1 <= num_ceps <= num_mel_filters <= frame_length/2 + 1"
            )
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def frame_count(self, num_samples: int) -> int:
        """Complete frames in a signal; the trailing remainder is dropped."""
        if num_samples < self.frame_length:
            return 0
        return (num_samples - self.frame_length) // self.hop_size + 1


def _mel_from_hz(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _hz_from_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _window(cfg: FrontendConfig) -> np.ndarray:
    # periodic Hann
    n = cfg.frame_length
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=None)
def _mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular filters (num_mel_filters x fft_bins), unit peak."""
    n_bins = cfg.frame_length // 2 + 1
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.frame_length
    mel_pts = np.linspace(_mel_from_hz(0.0), _mel_from_hz(cfg.sample_rate / 2.0),
                          cfg.num_mel_filters + 2)
    hz_pts = _hz_from_mel(mel_pts)
    rising = (bin_freqs[None, :] - hz_pts[:-2, None]) / (hz_pts[1:-1] - hz_pts[:-2])[:, None]
    falling = (hz_pts[2:, None] - bin_freqs[None, :]) / (hz_pts[2:] - hz_pts[1:-1])[:, None]
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=None)
def _dct_matrix(cfg: FrontendConfig) -> np.ndarray:
    """Orthonormal type-II DCT rows, truncated to num_ceps coefficients."""
    n = cfg.num_mel_filters
    k = np.arange(cfg.num_ceps)[:, None]
    m = np.arange(n)[None, :]
    d = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def mel_filter_center_frequencies(cfg: FrontendConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular mel filter."""
    mel_pts = np.linspace(_mel_from_hz(0.0), _mel_from_hz(cfg.sample_rate / 2.0),
                          cfg.num_mel_filters + 2)
    return _hz_from_mel(mel_pts[1:-1])


def _check_clip(x: AudioClip, cfg: FrontendConfig) -> None:
    if x.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"clip sample rate {x.sample_rate} != configured {cfg.sample_rate}"
        )
    if len(x) < cfg.frame_length:
        raise ValueError(
            f"clip of {len(x)} samples is shorter than one {cfg.frame_length}-sample frame"
        )


def frame_signal(x: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Slice a clip into overlapping frames (frame_count x frame_length).

    Frame k covers samples [k*hop, k*hop + frame_length); samples past
    the last complete frame are dropped.
    """
    _check_clip(x, cfg)
    windows = np.lib.stride_tricks.sliding_window_view(x.samples, cfg.frame_length)
    return windows[:: cfg.hop_size].copy()


def _analyze(x: AudioClip, cfg: FrontendConfig) -> dict:
    """Forward pass keeping the spectra needed for the adjoint."""
    frames = frame_signal(x, cfg)
    spectrum = np.fft.rfft(frames * _window(cfg), axis=1)
    mag = np.abs(spectrum)
    mel = mag @ _mel_filterbank(cfg).T
    return {"num_samples": len(x), "spectrum": spectrum, "mag": mag, "mel": mel}


def mel_energies(x: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Mel filterbank magnitudes per frame (frame_count x num_mel_filters)."""
    return _analyze(x, cfg)["mel"]


def mfcc(x: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Cepstral features (frame_count x num_ceps).

    Per frame: periodic-Hann window, real-FFT magnitude spectrum,
    triangular mel filterbank, log(energy + log_floor), orthonormal DCT-II
    truncated to num_ceps coefficients.
    """
    return np.log(mel_energies(x, cfg) + cfg.log_floor) @ _dct_matrix(cfg).T


def _vjp_from_analysis(cache: dict, cfg: FrontendConfig, upstream: np.ndarray) -> np.ndarray:
    mag, mel, spectrum = cache["mag"], cache["mel"], cache["spectrum"]
    window = _window(cfg)
    fb = _mel_filterbank(cfg)
    g_logmel = upstream @ _dct_matrix(cfg)
    g_mel = g_logmel / (mel + cfg.log_floor)
    g_mag = g_mel @ fb
    # adjoint of the magnitude: d|F|/dF direction F/|F| (zero where F = 0)
    ratio = np.divide(g_mag, mag, out=np.zeros_like(g_mag), where=mag > 0.0)
    g_spectrum = ratio * spectrum
    # adjoint of rfft; halving the interior bins makes irfft produce
    # Re(sum_k cotangent_k * exp(2i pi k n / N)), the transposed transform
    n = cfg.frame_length
    num_frames = mag.shape[0]
    g_spectrum[:, 1 : (n + 1) // 2] *= 0.5
    g_frames = n * np.fft.irfft(g_spectrum, n=n, axis=1) * window

    grad = np.zeros(cache["num_samples"])
    hop = cfg.hop_size
    for k in range(num_frames):
        grad[k * hop : k * hop + n] += g_frames[k]
    return grad


def mfcc_vjp(x: AudioClip, cfg: FrontendConfig, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of mfcc: d<upstream, mfcc(x)>/dx.

    Returns a gradient array of len(x) samples. Samples beyond the last
    complete frame receive exactly zero since they never enter a frame.
    """
    cache = _analyze(x, cfg)
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = (cache["mag"].shape[0], cfg.num_ceps)
    if upstream.shape != expected:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match feature shape {expected}"
        )
    return _vjp_from_analysis(cache, cfg, upstream)


def mfcc_difference(a: AudioClip, b: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Elementwise feature difference mfcc(a) - mfcc(b).

    Frame counts are truncated to the shorter of the two, which makes the
    grid directly plottable for comparing a clip against its shifted copy.
    """
    fa = mfcc(a, cfg)
    fb = mfcc(b, cfg)
    n = min(fa.shape[0], fb.shape[0])
    return fa[:n] - fb[:n]


def write_features_csv(values: np.ndarray, path) -> None:
    """Export a feature grid as CSV: one row per frame, 9 significant digits."""
    values = np.asarray(values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in values:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
