import struct

import numpy as np
import pytest

from unitg2p.config import FramingConfig
from unitg2p.dsp import (
    FeatureSequence,
    append_deltas,
    apply_cmvn,
    compute_cmvn,
    compute_mfcc,
    frame_count,
    frame_signal,
    log_mel_energies,
    mel_filterbank,
    power_spectrum,
    pre_emphasize,
    read_features,
    resample,
    write_features,
)
from unitg2p.exceptions import ContainerFormatError, DomainError


def _zero_crossing_frequency(x: np.ndarray, rate: int) -> float:
    signs = np.signbit(x)
    crossings = np.count_nonzero(signs[1:] != signs[:-1])
    return crossings / 2.0 / (len(x) / rate)


def test_resample_identity():
    x = np.random.default_rng(0).standard_normal(1000)
    y, rate = resample(x, 16000, 16000)
    assert rate == 16000
    assert np.array_equal(x, y)


def test_resample_length():
    y, rate = resample(np.zeros(22050), 22050, 16000)
    assert rate == 16000
    assert len(y) == 16000


def test_resample_preserves_frequency():
    t = np.arange(22050) / 22050
    y, rate = resample(np.sin(2 * np.pi * 440.0 * t), 22050, 16000)
    middle = y[2000:-2000]
    assert _zero_crossing_frequency(middle, rate) == pytest.approx(440.0, rel=0.01)


def test_resample_rejects_non_finite():
    with pytest.raises(DomainError):
        resample(np.array([0.0, np.nan, 1.0]), 22050, 16000)


def test_frame_count_law():
    cfg = FramingConfig()
    rng = np.random.default_rng(1)
    for n in rng.integers(0, 5000, size=1000):
        expected = 0 if n < 400 else 1 + (n - 400) // 160
        assert frame_count(int(n), cfg) == expected
        assert frame_signal(np.zeros(int(n)), cfg).shape == (expected, 400)


def test_mfcc_of_silence():
    seq = compute_mfcc(np.zeros(16000), 16000, FramingConfig())
    assert seq.n_frames == 98
    assert seq.dim == 39
    static = seq.data[:, :13]
    assert np.all(static == static[0])
    assert np.all(seq.data[:, 13:] == 0.0)


def test_mfcc_of_dc_signal():
    cfg = FramingConfig()
    x = np.full(4000, 0.5)
    assert np.all(np.isfinite(compute_mfcc(x, 16000, cfg).data))
    # skip the first frame, which holds the un-emphasized first sample
    frames = frame_signal(pre_emphasize(x, 0.97), cfg)[1:] * np.hamming(cfg.frame_samples)
    spectrum = power_spectrum(frames, cfg.nfft)
    assert np.all(spectrum[:, 3:] < 1e-3 * spectrum[:, :1])


def test_gain_only_shifts_c0():
    cfg = FramingConfig()
    x = np.random.default_rng(4).normal(scale=0.3, size=8000)
    base = compute_mfcc(x, 16000, cfg).data
    louder = compute_mfcc(2.0 * x, 16000, cfg).data
    shift = 2.0 * np.log(2.0) * np.sqrt(cfg.n_mel_filters)
    np.testing.assert_allclose(louder[:, 0] - base[:, 0], shift, atol=1e-8)
    np.testing.assert_allclose(louder[:, 1:], base[:, 1:], atol=1e-8)


def test_pure_tone_peaks_in_nearest_filter():
    cfg = FramingConfig(pre_emphasis=0.0)
    t = np.arange(16000) / 16000
    energies = log_mel_energies(0.5 * np.sin(2 * np.pi * 1000.0 * t), cfg)
    _, centers = mel_filterbank(cfg)
    assert int(np.argmax(energies.mean(axis=0))) == int(np.argmin(np.abs(centers - 1000.0)))


def test_fft_path_matches_naive_dft():
    cfg = FramingConfig()
    rng = np.random.default_rng(2)
    frames = rng.standard_normal((100, cfg.frame_samples)) * np.hamming(cfg.frame_samples)
    weights, _ = mel_filterbank(cfg)

    n = np.arange(cfg.nfft)
    k = np.arange(cfg.nfft // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(n, k) / cfg.nfft)
    padded = np.zeros((100, cfg.nfft))
    padded[:, :cfg.frame_samples] = frames
    naive_power = np.abs(padded @ basis) ** 2 / cfg.nfft
    log_e = np.log(np.maximum(naive_power @ weights.T, cfg.log_floor))
    m = cfg.n_mel_filters
    q = np.arange(cfg.n_cepstra)[:, None]
    cosines = np.cos(np.pi * q * (np.arange(m)[None, :] + 0.5) / m)
    scale = np.full((cfg.n_cepstra, 1), np.sqrt(2.0 / m))
    scale[0] = np.sqrt(1.0 / m)
    naive_cepstra = log_e @ (scale * cosines).T

    from scipy.fft import dct
    fast = dct(np.log(np.maximum(power_spectrum(frames, cfg.nfft) @ weights.T, cfg.log_floor)),
               type=2, norm="ortho", axis=1)[:, :cfg.n_cepstra]
    np.testing.assert_allclose(fast, naive_cepstra, rtol=1e-6, atol=1e-9)


def test_mfcc_of_short_audio_is_empty():
    seq = compute_mfcc(np.zeros(399), 16000, FramingConfig())
    assert seq.n_frames == 0
    assert seq.dim == 39


def test_mfcc_rate_mismatch():
    with pytest.raises(DomainError):
        compute_mfcc(np.zeros(1000), 8000, FramingConfig())


def test_deltas_of_constant_features():
    out = append_deltas(np.ones((10, 4)) * 3.0, 2)
    assert out.shape == (10, 12)
    assert np.all(out[:, 4:] == 0.0)


def test_deltas_of_linear_features():
    slope = 0.7
    static = slope * np.arange(20, dtype=np.float64)[:, None] * np.ones((1, 3))
    delta = append_deltas(static, 2)[:, 3:6]
    np.testing.assert_allclose(delta[2:-2], slope)


def test_deltas_match_regression_formula():
    static = np.random.default_rng(3).standard_normal((10, 13))
    window = 2

    def brute(feat):
        out = np.zeros_like(feat)
        last = len(feat) - 1
        for t in range(len(feat)):
            num = sum(n * (feat[min(t + n, last)] - feat[max(t - n, 0)]) for n in range(1, window + 1))
            out[t] = num / (2 * sum(n * n for n in range(1, window + 1)))
        return out

    d = brute(static)
    np.testing.assert_allclose(append_deltas(static, window), np.hstack([static, d, brute(d)]), atol=1e-12)


def test_cmvn_normalizes():
    rng = np.random.default_rng(4)
    seqs = [FeatureSequence(rng.normal(5.0, 3.0, size=(50, 6)), 100.0, 0.5) for _ in range(4)]
    stats = compute_cmvn(seqs)
    stacked = np.concatenate([apply_cmvn(s, stats).data for s in seqs])
    np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(stacked.std(axis=0), 1.0, atol=1e-10)


def test_cmvn_needs_frames():
    with pytest.raises(DomainError):
        compute_cmvn([FeatureSequence(np.zeros((0, 3)), 100.0, 0.0)])


def test_feature_dump_round_trip(tmp_path):
    data = np.random.default_rng(5).standard_normal((7, 39))
    write_features(tmp_path / "f.ugpf", FeatureSequence(data, 100.0, 0.0734))
    back = read_features(tmp_path / "f.ugpf")
    assert back.frame_rate_hz == 100.0
    assert back.source_duration_s == 0.0734
    assert np.array_equal(back.data, data.astype(np.float32).astype(np.float64))


def test_feature_dump_reads_version_one(tmp_path):
    path = tmp_path / "old.ugpf"
    rows = np.arange(6, dtype="<f4").reshape(2, 3)
    path.write_bytes(struct.pack("<4sIIId", b"UGPF", 1, 2, 3, 100.0) + rows.tobytes())
    back = read_features(path)
    assert back.source_duration_s == pytest.approx(0.02)
    np.testing.assert_array_equal(back.data, rows)


def test_feature_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "f.ugpf"
    write_features(path, FeatureSequence(np.zeros((2, 3)), 100.0, 0.02))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerFormatError):
        read_features(path)
