"""
Resampling and 39-dimensional MFCC extraction.

The feature path is: pre-emphasis -> framing -> Hamming window -> power
spectrum -> mel filterbank -> floored log -> orthonormal DCT-II -> deltas.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.signal import firwin, resample_poly

from .config.settings import FramingConfig
from .exceptions import ContainerFormatError, DomainError

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"UGPF"
FEATURE_VERSION = 2
_FEATURE_HEADER = struct.Struct("<4sIIId")
_FEATURE_DURATION = struct.Struct("<d")

RESAMPLE_ZERO_CROSSINGS = 16
RESAMPLE_KAISER_BETA = 8.0
CMVN_STD_FLOOR = 1e-8


@dataclass
class FeatureSequence:
    data: np.ndarray
    frame_rate_hz: float
    source_duration_s: float

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DomainError(f"feature data must be T x D, got shape {self.data.shape}")

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


def frame_count(n_samples: int, cfg: FramingConfig) -> int:
    """T = 1 + floor((N - frame) / hop) when N >= frame, else 0."""
    if n_samples < cfg.frame_samples:
        return 0
    return 1 + (n_samples - cfg.frame_samples) // cfg.hop_samples


def resample(samples: np.ndarray, source_rate: int, target_rate: int) -> Tuple[np.ndarray, int]:
    """
    Band-limited resampling with a Kaiser-windowed sinc (beta 8, 16 zero crossings).

    Args:
        samples: Mono sample vector
        source_rate: Rate of ``samples`` in Hz
        target_rate: Desired rate in Hz

    Returns:
        (resampled samples, target_rate); the output has round(N * target / source) samples

    Raises:
        DomainError: Non-positive rates or non-finite samples
    """
    x = np.asarray(samples, dtype=np.float64)
    if source_rate <= 0 or target_rate <= 0:
        raise DomainError("sample rates must be > 0")
    if not np.all(np.isfinite(x)):
        raise DomainError("audio contains non-finite samples")
    if source_rate == target_rate:
        return x.copy(), target_rate

    g = math.gcd(int(source_rate), int(target_rate))
    up, down = int(target_rate) // g, int(source_rate) // g
    max_rate = max(up, down)
    taps = firwin(2 * RESAMPLE_ZERO_CROSSINGS * max_rate + 1, 1.0 / max_rate,
                  window=("kaiser", RESAMPLE_KAISER_BETA))
    y = resample_poly(x, up, down, window=taps)

    n_out = int(math.floor(len(x) * target_rate / source_rate + 0.5))
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return y, target_rate


def pre_emphasize(x: np.ndarray, coefficient: float) -> np.ndarray:
    if coefficient == 0 or len(x) == 0:
        return np.asarray(x, dtype=np.float64).copy()
    return np.concatenate([x[:1], x[1:] - coefficient * x[:-1]])


def frame_signal(x: np.ndarray, cfg: FramingConfig) -> np.ndarray:
    """Slice a signal into (T, frame_samples) overlapping frames."""
    n_frames = frame_count(len(x), cfg)
    if n_frames == 0:
        return np.zeros((0, cfg.frame_samples), dtype=np.float64)
    return sliding_window_view(x, cfg.frame_samples)[::cfg.hop_samples][:n_frames]


def power_spectrum(frames: np.ndarray, nfft: int) -> np.ndarray:
    """Periodogram |FFT|^2 / nfft of already-windowed frames, nfft//2 + 1 bins."""
    return np.abs(np.fft.rfft(frames, n=nfft, axis=-1)) ** 2 / nfft


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FramingConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Triangular mel filters over the rfft bins.

    Returns:
        (weights of shape (n_mel_filters, nfft//2 + 1), filter center frequencies in Hz)
    """
    n_bins = cfg.nfft // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.nfft
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mel_filters + 2))
    weights = np.zeros((cfg.n_mel_filters, n_bins), dtype=np.float64)
    for m in range(cfg.n_mel_filters):
        left, center, right = edges_hz[m:m + 3]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights, edges_hz[1:-1]


def log_mel_energies(samples: np.ndarray, cfg: FramingConfig) -> np.ndarray:
    """Floored log mel filterbank energies, shape (T, n_mel_filters)."""
    x = pre_emphasize(np.asarray(samples, dtype=np.float64), cfg.pre_emphasis)
    frames = frame_signal(x, cfg) * np.hamming(cfg.frame_samples)
    weights, _ = mel_filterbank(cfg)
    energies = power_spectrum(frames, cfg.nfft) @ weights.T
    return np.log(np.maximum(energies, cfg.log_floor))


def append_deltas(static: np.ndarray, window: int) -> np.ndarray:
    """
    Append regression deltas and delta-deltas.

    d_t = sum_{n=1..N} n (c_{t+n} - c_{t-n}) / (2 sum_{n=1..N} n^2), with the
    first and last frames replicated at the edges; delta-deltas are the
    deltas of the deltas.

    Returns:
        (T, 3n) matrix [static, delta, delta-delta]
    """
    if window < 1:
        raise DomainError("delta window must be >= 1")
    static = np.asarray(static, dtype=np.float64)
    if static.shape[0] == 0:
        return np.zeros((0, 3 * static.shape[1]), dtype=np.float64)

    def _delta(feat: np.ndarray) -> np.ndarray:
        n_frames = feat.shape[0]
        padded = np.pad(feat, ((window, window), (0, 0)), mode="edge")
        denom = 2.0 * sum(n * n for n in range(1, window + 1))
        out = np.zeros_like(feat)
        for n in range(1, window + 1):
            out += n * (padded[window + n:window + n + n_frames] - padded[window - n:window - n + n_frames])
        return out / denom

    delta = _delta(static)
    return np.hstack([static, delta, _delta(delta)])


def compute_mfcc(samples: np.ndarray, sample_rate: int, cfg: FramingConfig) -> FeatureSequence:
    """
    39-dimensional MFCCs (13 static + deltas + delta-deltas with the default config).

    Args:
        samples: Mono sample vector
        sample_rate: Rate of ``samples``; must equal cfg.sample_rate
        cfg: Framing configuration

    Returns:
        FeatureSequence of shape (T, 3 * n_cepstra); T = 0 for audio shorter than one frame

    Raises:
        DomainError: Sample rate mismatch or non-finite samples
    """
    if sample_rate != cfg.sample_rate:
        raise DomainError(f"audio at {sample_rate} Hz but framing expects {cfg.sample_rate} Hz")
    x = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("audio contains non-finite samples")
    duration = len(x) / sample_rate
    if frame_count(len(x), cfg) == 0:
        return FeatureSequence(np.zeros((0, cfg.feature_dim)), cfg.frame_rate_hz, duration)

    static = dct(log_mel_energies(x, cfg), type=2, norm="ortho", axis=1)[:, :cfg.n_cepstra]
    return FeatureSequence(append_deltas(static, cfg.delta_window), cfg.frame_rate_hz, duration)


@dataclass(frozen=True)
class CmvnStats:
    mean: np.ndarray
    std: np.ndarray


def compute_cmvn(sequences: Iterable[FeatureSequence]) -> CmvnStats:
    """Global per-dimension mean and (floored) standard deviation over all frames."""
    blocks = [s.data for s in sequences if s.n_frames]
    if not blocks:
        raise DomainError("cannot compute normalization statistics from zero frames")
    stacked = np.concatenate(blocks, axis=0)
    return CmvnStats(mean=stacked.mean(axis=0), std=np.maximum(stacked.std(axis=0), CMVN_STD_FLOOR))


def apply_cmvn(seq: FeatureSequence, stats: CmvnStats) -> FeatureSequence:
    if seq.dim != len(stats.mean):
        raise DomainError(f"feature dim {seq.dim} does not match normalization dim {len(stats.mean)}")
    return FeatureSequence((seq.data - stats.mean) / stats.std, seq.frame_rate_hz, seq.source_duration_s)


def write_features(path: Union[str, Path], seq: FeatureSequence) -> None:
    """
    Dump a FeatureSequence as header(UGPF, version, T, D, frame_rate), the
    source duration (f64), then f32 rows.
    """
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, seq.n_frames, seq.dim, seq.frame_rate_hz))
        fh.write(_FEATURE_DURATION.pack(seq.source_duration_s))
        fh.write(np.ascontiguousarray(seq.data, dtype="<f4").tobytes())


def read_features(path: Union[str, Path]) -> FeatureSequence:
    """
    Load a UGPF feature dump.

    Version 1 dumps carry no duration; it is derived from the frame count.

    Raises:
        ContainerFormatError: Bad magic, unsupported version or truncated payload
    """
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise ContainerFormatError(f"{path}: truncated feature header")
    magic, version, n_frames, dim, frame_rate = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {magic!r}")
    if version not in (1, FEATURE_VERSION):
        raise ContainerFormatError(f"{path}: unsupported feature container version {version}")
    offset = _FEATURE_HEADER.size
    if version == 1:
        duration = n_frames / frame_rate if frame_rate else 0.0
    else:
        if len(raw) < offset + _FEATURE_DURATION.size:
            raise ContainerFormatError(f"{path}: truncated feature header")
        (duration,) = _FEATURE_DURATION.unpack_from(raw, offset)
        offset += _FEATURE_DURATION.size
    payload = raw[offset:]
    if len(payload) != 4 * n_frames * dim:
        raise ContainerFormatError(f"{path}: expected {n_frames}x{dim} floats, found {len(payload) // 4}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_frames, dim).astype(np.float64)
    return FeatureSequence(data, frame_rate, duration)
