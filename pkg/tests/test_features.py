import math

import numpy as np
import pytest

from nsr.errors import ConfigError, FormatError, InputTooShort
from nsr.features import (AudioClip, FeatureConfig, FeatureSequence, extract_filterbank,
                          hz_to_mel, mel_center_frequencies, mel_to_hz, read_features, read_wav,
                          stack_frames, write_features, write_wav)

SR = 16000


def sine(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), SR)


def test_mel_scale_round_trip():
    f = np.array([0.0, 440.0, 1000.0, 7999.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(700.0) == pytest.approx(2595.0 * math.log10(2.0))


def test_silence_hits_the_floor():
    cfg = FeatureConfig(stack_factor=1)
    fs = extract_filterbank(AudioClip(np.zeros(4000), SR), cfg)
    assert np.all(fs.frames == math.log(cfg.log_floor))


def test_frame_count_and_shift():
    fs = extract_filterbank(AudioClip(np.zeros(16000), SR), FeatureConfig(stack_factor=1))
    assert fs.num_frames == 98 and fs.dim == 40
    assert fs.frame_shift == pytest.approx(0.010)
    stacked = extract_filterbank(AudioClip(np.zeros(16000), SR))
    assert stacked.num_frames == 32 and stacked.dim == 120
    assert stacked.frame_shift == pytest.approx(0.030)


def _oracle_mel_energies(window, cfg):
    """Power spectrum by an explicit DFT sum, then triangles built point by point."""
    n = cfg.fft_size
    padded = np.zeros(n)
    padded[:len(window)] = window
    k = np.arange(n // 2 + 1)
    power = np.array([abs(sum(padded[j] * complex(math.cos(-2 * math.pi * kk * j / n),
                                                  math.sin(-2 * math.pi * kk * j / n))
                              for j in range(n))) ** 2 for kk in k])
    lo, hi = hz_to_mel(0.0), hz_to_mel(SR / 2)
    edges = [float(mel_to_hz(lo + (hi - lo) * i / (cfg.num_mel_bins + 1)))
             for i in range(cfg.num_mel_bins + 2)]
    out = []
    for m in range(cfg.num_mel_bins):
        total = 0.0
        for kk in k:
            f = kk * SR / n
            if edges[m] < f <= edges[m + 1]:
                w = (f - edges[m]) / (edges[m + 1] - edges[m])
            elif edges[m + 1] < f < edges[m + 2]:
                w = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1])
            else:
                w = 0.0
            total += w * power[kk]
        out.append(total)
    return np.array(out)


def test_sine_peaks_in_the_bracketing_bin():
    cfg = FeatureConfig(stack_factor=1)
    clip = sine(1000.0, 0.1)
    fs = extract_filterbank(clip, cfg)
    centers = mel_center_frequencies(cfg.num_mel_bins, SR)
    expected_bin = int(np.argmin(np.abs(centers - 1000.0)))
    assert np.all(fs.frames.argmax(axis=1) == expected_bin)
    win = cfg.window_samples(SR)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)
    oracle = _oracle_mel_energies(clip.samples[:win] * hann, cfg)
    assert int(np.argmax(oracle)) == expected_bin
    np.testing.assert_allclose(fs.frames[0], np.log(np.maximum(oracle, cfg.log_floor)), atol=1e-6)


def test_shift_by_one_hop_shifts_frames():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, size=8000)
    cfg = FeatureConfig(stack_factor=1)
    a = extract_filterbank(AudioClip(x, SR), cfg).frames
    b = extract_filterbank(AudioClip(x[160:], SR), cfg).frames
    np.testing.assert_allclose(a[1:1 + len(b)], b, atol=1e-10)


def test_deterministic_and_finite():
    x = np.random.default_rng(1).uniform(-1, 1, size=5000)
    a = extract_filterbank(AudioClip(x, SR)).frames
    b = extract_filterbank(AudioClip(x.copy(), SR)).frames
    assert np.array_equal(a, b) and np.all(np.isfinite(a))


def test_stack_frames():
    fs = FeatureSequence(np.arange(12.0).reshape(6, 2), 0.01)
    out = stack_frames(fs, 3)
    assert out.frames.shape == (2, 6)
    assert out.frames[0].tolist() == [0, 1, 2, 3, 4, 5]
    assert out.frame_shift == pytest.approx(0.03)
    assert stack_frames(FeatureSequence(np.zeros((7, 2)), 0.01), 3).num_frames == 2
    assert np.array_equal(stack_frames(fs, 1).frames, fs.frames)
    with pytest.raises(ConfigError):
        stack_frames(fs, 0)


def test_errors():
    with pytest.raises(InputTooShort):
        extract_filterbank(AudioClip(np.zeros(100), SR))
    with pytest.raises(ConfigError):
        extract_filterbank(sine(440), FeatureConfig(fft_size=256))
    with pytest.raises(ConfigError):
        extract_filterbank(sine(440), FeatureConfig(num_mel_bins=0))


def test_wav_round_trip(tmp_path):
    clip = sine(440.0, 0.2)
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    np.testing.assert_allclose(back.samples, clip.samples, atol=1 / 32767)


def test_feature_container(tmp_path):
    fs = FeatureSequence(np.random.default_rng(2).normal(size=(5, 3)), 0.03)
    write_features(tmp_path / "x.feat", fs)
    raw = (tmp_path / "x.feat").read_bytes()
    assert raw[:4] == b"FEAT" and len(raw) == 16 + 5 * 3 * 4
    back = read_features(tmp_path / "x.feat")
    np.testing.assert_allclose(back.frames, fs.frames, rtol=1e-6)
    assert back.frame_shift == pytest.approx(0.03)
    (tmp_path / "x.feat").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_features(tmp_path / "x.feat")
