"""Audio front end: STFT, mel-spectrogram, frame energy, WAV I/O and Griffin-Lim."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 22050
    frame_size: int = 1024
    hop_size: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        if self.hop_size <= 0 or self.frame_size <= 0:
            raise ConfigError("frame and hop sizes must be positive")
        if self.hop_size > self.frame_size:
            raise ConfigError("hop_size must not exceed frame_size")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")

    @property
    def frame_period(self) -> float:
        """Seconds between consecutive frames."""
        return self.hop_size / self.sample_rate

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop_size


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("waveform must be a non-empty mono signal")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [T, n_mels], natural-log amplitude
    config: AudioConfig

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# WAV


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Read a mono 16-bit PCM RIFF file into [-1, 1) floats."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} != configured {expected_rate} (no resampling)")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(pcm, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# STFT


@lru_cache(maxsize=8)
def hann_window(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for overlap-add analysis
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _frames(samples: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    half = cfg.frame_size // 2
    mode = "reflect" if samples.size > 1 else "constant"
    padded = np.pad(samples, half, mode=mode)
    n = cfg.n_frames(samples.size)
    idx = np.arange(cfg.frame_size)[None, :] + cfg.hop_size * np.arange(n)[:, None]
    return padded[idx]


def stft(w: Waveform, cfg: AudioConfig) -> np.ndarray:
    """Centered, reflect-padded, Hann-windowed STFT: ``[T, frame_size/2 + 1]`` complex."""
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if samples.size == 0:
        raise DataError("empty waveform")
    frames = _frames(samples, cfg) * hann_window(cfg.frame_size)
    return np.fft.rfft(frames, axis=1)


def istft(spec: np.ndarray, cfg: AudioConfig, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    T = spec.shape[0]
    N, hop, half = cfg.frame_size, cfg.hop_size, cfg.frame_size // 2
    win = hann_window(N)
    frames = np.fft.irfft(spec, n=N, axis=1) * win
    total = N + hop * (T - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(T):
        out[t * hop : t * hop + N] += frames[t]
        norm[t * hop : t * hop + N] += win * win
    out = np.where(norm > 1e-8, out / np.maximum(norm, 1e-8), 0.0)
    out = out[half:]
    if length is None:
        length = hop * (T - 1)
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out[:length]


# ---------------------------------------------------------------------------
# mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: AudioConfig) -> np.ndarray:
    """Area-normalized triangular filters, ``[n_mels, frame_size/2 + 1]``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.frame_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb *= (2.0 / (hi - lo))
    fb.setflags(write=False)
    return fb


def extract_mel(w: Waveform, cfg: AudioConfig) -> MelSpectrogram:
    mag = np.abs(stft(w, cfg))
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)), cfg)


def energy_from_stft(frames: np.ndarray) -> np.ndarray:
    """Per-frame L2 norm of the STFT magnitude."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise DataError("energy needs at least one STFT frame")
    power = frames.real**2 + frames.imag**2
    return np.sqrt(power.sum(axis=1))


# ---------------------------------------------------------------------------
# Griffin-Lim


def griffin_lim(m: MelSpectrogram, n_iter: int = 60) -> Waveform:
    """Mel -> waveform by filterbank pseudo-inverse and iterative phase recovery.

    With ``n_iter == 0`` the result is a single inverse STFT of the magnitude
    estimate with zero phase.
    """
    if n_iter < 0:
        raise ConfigError("n_iter must be >= 0")
    cfg = m.config
    fb = mel_filterbank(cfg)
    mag = np.maximum(np.exp(m.frames) @ np.linalg.pinv(fb).T, 0.0)
    length = cfg.hop_size * (mag.shape[0] - 1)
    spec = mag.astype(np.complex128)
    x = istft(spec, cfg, length)
    for _ in range(n_iter):
        rebuilt = stft(x, cfg)
        phase = np.exp(1j * np.angle(rebuilt))
        x = istft(mag * phase, cfg, length)
    if x.size == 0:
        x = np.zeros(1)
    return Waveform(np.clip(x, -1.0, 1.0), cfg.sample_rate)


def read_audio_features(path, cfg: AudioConfig):
    """Convenience: waveform, complex STFT, mel and energy for one file."""
    w = read_wav(Path(path), cfg.sample_rate)
    spec = stft(w, cfg)
    mel = np.log(np.maximum(np.abs(spec) @ mel_filterbank(cfg).T, LOG_FLOOR))
    return w, spec, MelSpectrogram(mel, cfg), energy_from_stft(spec)
