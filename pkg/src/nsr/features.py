"""Log mel filterbank front end.

The network consumes a ``T x D`` grid of log mel energies. Frames are computed
with a Hann window over the power spectrum, then optionally stacked so that
several consecutive 10 ms frames form one 30 ms network frame.

Binary feature container (little endian)::

    b"FEAT" | u32 T | u32 D | f32 frame_shift | T*D f32, row-major
"""

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, InputTooShort

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive, got %r" % self.sample_rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_shift: float = 0.01

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise FormatError("frames must be a T x D grid, got shape %s" % (frames.shape,))
        self.frames = frames

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class FeatureConfig:
    window_length: float = 0.025
    hop: float = 0.010
    num_mel_bins: int = 40
    fft_size: int = 512
    log_floor: float = 1e-10
    stack_factor: int = 3
    low_freq: float = 0.0
    high_freq: float = field(default=None)

    def window_samples(self, sample_rate):
        return int(round(self.window_length * sample_rate))

    def hop_samples(self, sample_rate):
        return int(round(self.hop * sample_rate))

    def validate(self, sample_rate):
        win = self.window_samples(sample_rate)
        hop = self.hop_samples(sample_rate)
        if win < 1 or hop < 1:
            raise ConfigError("window and hop must each cover at least one sample")
        if self.fft_size < win:
            raise ConfigError("fft_size %d is smaller than the window (%d samples)" % (self.fft_size, win))
        if self.num_mel_bins < 1:
            raise ConfigError("num_mel_bins must be >= 1")
        if self.stack_factor < 1:
            raise ConfigError("stack_factor must be >= 1")
        if not self.log_floor > 0:
            raise ConfigError("log_floor must be positive")
        high = self.high_freq if self.high_freq is not None else sample_rate / 2.0
        if not 0 <= self.low_freq < high <= sample_rate / 2.0:
            raise ConfigError("mel band edges must satisfy 0 <= low < high <= nyquist")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(num_mel_bins, sample_rate, low_freq=0.0, high_freq=None):
    """Center frequency in Hz of each triangular filter."""
    high = sample_rate / 2.0 if high_freq is None else high_freq
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high), num_mel_bins + 2))
    return edges[1:-1]


def mel_filterbank(num_mel_bins, fft_size, sample_rate, low_freq=0.0, high_freq=None):
    """Triangular filters on the rfft bins, shape ``(num_mel_bins, fft_size // 2 + 1)``.

    Neighbouring triangles overlap by half: filter ``m`` rises from the center
    of ``m - 1`` and falls to the center of ``m + 1``.
    """
    high = sample_rate / 2.0 if high_freq is None else high_freq
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high), num_mel_bins + 2))
    freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def num_frames(num_samples, window_samples, hop_samples):
    if num_samples < window_samples:
        return 0
    return (num_samples - window_samples) // hop_samples + 1


def stack_frames(fs, factor):
    """Concatenate each run of ``factor`` frames into one wider frame.

    Trailing frames that do not fill a complete group are dropped.
    """
    if factor < 1:
        raise ConfigError("stack factor must be >= 1, got %r" % factor)
    if factor == 1:
        return FeatureSequence(fs.frames.copy(), fs.frame_shift)
    t_out = fs.num_frames // factor
    frames = fs.frames[: t_out * factor].reshape(t_out, factor * fs.dim)
    return FeatureSequence(frames, fs.frame_shift * factor)


def extract_filterbank(clip, cfg=None):
    cfg = FeatureConfig() if cfg is None else cfg
    sr = clip.sample_rate
    cfg.validate(sr)
    win = cfg.window_samples(sr)
    hop = cfg.hop_samples(sr)
    if len(clip) == 0 or len(clip) < win:
        raise InputTooShort("clip has %d samples, one window needs %d" % (len(clip), win))

    n_frames = num_frames(len(clip), win, hop)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)  # periodic Hann
    frames = clip.samples[idx] * window
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    fbank = mel_filterbank(cfg.num_mel_bins, cfg.fft_size, sr, cfg.low_freq, cfg.high_freq)
    energy = power @ fbank.T
    logmel = np.log(np.maximum(energy, cfg.log_floor))
    return stack_frames(FeatureSequence(logmel, cfg.hop), cfg.stack_factor)


def read_wav(path):
    """Read a mono 16-bit PCM WAV file into an :class:`AudioClip`."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise FormatError("%s: expected mono audio, got %d channels" % (path, wf.getnchannels()))
        if wf.getsampwidth() != 2:
            raise FormatError("%s: expected 16-bit PCM" % path)
        raw = wf.readframes(wf.getnframes())
        sr = wf.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, sr)


def write_wav(path, clip):
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(pcm.tobytes())


def write_features(path, fs):
    t, d = fs.frames.shape
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<IIf", t, d, fs.frame_shift))
        f.write(np.ascontiguousarray(fs.frames, dtype="<f4").tobytes())


def read_features(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEAT_MAGIC:
        raise FormatError("%s: bad magic %r" % (path, data[:4]))
    t, d, shift = struct.unpack_from("<IIf", data, 4)
    body = np.frombuffer(data, dtype="<f4", offset=16)
    if body.size != t * d:
        raise FormatError("%s: expected %d values, found %d" % (path, t * d, body.size))
    return FeatureSequence(body.reshape(t, d).astype(np.float64), float(shift))
