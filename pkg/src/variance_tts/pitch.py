"""Pitch extraction, contour preprocessing and the 10-scale wavelet pitch spectrogram.

A contour is decomposed with a Mexican hat wavelet at dyadic scales
``tau_i = 2**(i+1) * tau0`` (``i = 1..10``, ``tau0 = 5 ms``) and each
component is weighted by ``(i + 2.5) ** -2.5``. Recomposition is the weighted
component sum, optionally with per-scale gains fitted on synthetic contours
so the 10-scale sum is a usable inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import AudioConfig, Waveform, _frames
from .errors import ConfigError, DataError, UnvoicedError

N_SCALES = 10
TAU0 = 0.005
STD_FLOOR = 1e-6
YIN_THRESHOLD = 0.15
# truncate the wavelet where |u| = |x - t| / tau exceeds this
WAVELET_SUPPORT = 6.0


@dataclass
class PitchContour:
    f0: np.ndarray  # Hz, 0 where unvoiced
    voiced_mask: np.ndarray
    interpolated: np.ndarray | None = None  # Hz, gaps filled
    normalized_logf0: np.ndarray | None = None
    utt_mean: float | None = None
    utt_std: float | None = None

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced_mask = np.asarray(self.voiced_mask, dtype=bool)
        if self.f0.shape != self.voiced_mask.shape:
            raise DataError("f0 and voiced mask lengths differ")

    @classmethod
    def from_f0(cls, f0) -> "PitchContour":
        f0 = np.asarray(f0, dtype=np.float64)
        return cls(f0, f0 > 0)

    def __len__(self) -> int:
        return self.f0.size


@dataclass
class PitchSpectrogram:
    components: np.ndarray  # [T, 10]
    utt_mean: float
    utt_std: float
    tau0: float = TAU0


# ---------------------------------------------------------------------------
# F0 estimation


def estimate_f0(
    w: Waveform, cfg: AudioConfig, f0min: float = 70.0, f0max: float = 400.0,
    threshold: float = YIN_THRESHOLD,
) -> PitchContour:
    """YIN pitch track on the same centered frame grid as :func:`dsp.stft`."""
    sr = cfg.sample_rate
    if not 0 < f0min < f0max < sr / 2:
        raise ConfigError("need 0 < f0min < f0max < sample_rate / 2")
    tau_min = max(2, int(sr / f0max))
    tau_max = int(math.ceil(sr / f0min)) + 1
    N = cfg.frame_size
    W = N - tau_max - 1
    if W < tau_max:
        raise ConfigError("frame_size too short for the requested f0min")
    frames = _frames(w.samples, cfg)
    T = frames.shape[0]

    diff = np.zeros((T, tau_max + 2))
    head = frames[:, :W]
    for tau in range(1, tau_max + 2):
        d = head - frames[:, tau : tau + W]
        diff[:, tau] = np.einsum("ij,ij->i", d, d)

    cum = np.cumsum(diff[:, 1:], axis=1)
    taus = np.arange(1, tau_max + 2)
    cmnd = np.ones_like(diff)
    with np.errstate(invalid="ignore", divide="ignore"):
        cmnd[:, 1:] = np.where(cum > 0, diff[:, 1:] * taus / cum, 1.0)

    energy = np.einsum("ij,ij->i", head, head)
    f0 = np.zeros(T)
    for t in range(T):
        if energy[t] < 1e-8 * W:
            continue
        row = cmnd[t]
        below = np.nonzero(row[tau_min : tau_max + 1] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        a, b, c = row[tau - 1], row[tau], row[tau + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        period = tau + float(np.clip(shift, -1.0, 1.0))
        hz = sr / period
        if f0min <= hz <= f0max:
            f0[t] = hz
    return PitchContour.from_f0(f0)


# ---------------------------------------------------------------------------
# preprocessing


def interpolate_unvoiced(f0: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    """Fill unvoiced frames linearly in Hz; edges hold the nearest voiced value."""
    idx = np.nonzero(voiced)[0]
    if idx.size == 0:
        raise UnvoicedError("unvoiced utterance")
    return np.interp(np.arange(f0.size), idx, f0[idx])


def preprocess_pitch(c: PitchContour) -> PitchContour:
    interp = interpolate_unvoiced(c.f0, c.voiced_mask)
    logf0 = np.log(interp)
    mean = float(logf0.mean())
    std = float(logf0.std())
    if std < STD_FLOOR:
        norm = np.zeros_like(logf0)
        std = STD_FLOOR
    else:
        norm = (logf0 - mean) / std
    return PitchContour(c.f0.copy(), c.voiced_mask.copy(), interp, norm, mean, std)


def denormalize(norm: np.ndarray, mean: float, std: float) -> np.ndarray:
    """Normalized log-F0 back to Hz."""
    return np.exp(np.asarray(norm) * std + mean)


# ---------------------------------------------------------------------------
# wavelet transform


def mexican_hat(u):
    u = np.asarray(u, dtype=np.float64)
    return (2.0 / (math.sqrt(3.0) * math.pi**0.25)) * (1.0 - u * u) * np.exp(-0.5 * u * u)


def scales(tau0: float = TAU0) -> np.ndarray:
    return np.array([2.0 ** (i + 1) * tau0 for i in range(1, N_SCALES + 1)])


def scale_weights() -> np.ndarray:
    return np.array([(i + 2.5) ** -2.5 for i in range(1, N_SCALES + 1)])


@lru_cache(maxsize=64)
def wavelet_kernel(tau: float, frame_period: float) -> np.ndarray:
    """Quadrature weights ``tau**-0.5 * psi(k dt / tau) * dt`` for k in [-K, K].

    The sampled kernel is shifted to sum to exactly zero so a constant
    contour has no response at any scale despite truncation.
    """
    K = max(1, int(math.ceil(WAVELET_SUPPORT * tau / frame_period)))
    k = np.arange(-K, K + 1)
    ker = mexican_hat(k * frame_period / tau)
    ker = ker - ker.mean()
    ker = ker * frame_period / math.sqrt(tau)
    ker.setflags(write=False)
    return ker


def kernel_half_width(tau: float, frame_period: float) -> int:
    return (wavelet_kernel(tau, frame_period).size - 1) // 2


def _symmetric_extend(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, pad, mode="symmetric")


def cwt_decompose(
    c: PitchContour | np.ndarray, frame_period: float, tau0: float = TAU0
) -> PitchSpectrogram:
    """Weighted 10-scale wavelet components ``[T, 10]`` of a normalized contour."""
    if isinstance(c, PitchContour):
        if c.normalized_logf0 is None:
            raise DataError("contour has not been preprocessed")
        x, mean, std = c.normalized_logf0, c.utt_mean, c.utt_std
    else:
        x, mean, std = np.asarray(c, dtype=np.float64), 0.0, 1.0
    T = x.size
    if T < 2:
        raise DataError("contour must have at least 2 frames")
    out = np.empty((T, N_SCALES))
    for j, (tau, wgt) in enumerate(zip(scales(tau0), scale_weights())):
        ker = wavelet_kernel(float(tau), frame_period)
        K = (ker.size - 1) // 2
        ext = _symmetric_extend(x, K)
        out[:, j] = np.correlate(ext, ker, mode="valid") * wgt
    return PitchSpectrogram(out, mean, std, tau0)


# Per-scale recomposition gains from fit_icwt_gains(256 / 22050), i.e. the
# default frame period. Other frame periods are refitted on demand.
DEFAULT_FRAME_PERIOD = 256 / 22050
DEFAULT_ICWT_GAINS = (
    2078.006969, 2425.779052, 5862.722303, 9182.462425, 13358.80012,
    17775.68144, 21712.72411, 25535.25223, 28624.12317, 0.0,
)


@lru_cache(maxsize=8)
def icwt_gains_for(frame_period: float) -> tuple:
    if abs(frame_period - DEFAULT_FRAME_PERIOD) < 1e-12:
        return DEFAULT_ICWT_GAINS
    return tuple(float(g) for g in fit_icwt_gains(frame_period))


def icwt_recompose(s: PitchSpectrogram | np.ndarray, gains=None) -> np.ndarray:
    """Normalized contour ``sum_i W_i (i + 2.5) ** -2.5 * g_i``.

    ``gains=None`` uses the stored calibration; pass ``np.ones(10)`` for the
    bare weighted sum. Denormalization is a separate step (:func:`denormalize`).
    """
    comps = s.components if isinstance(s, PitchSpectrogram) else np.asarray(s)
    if comps.shape[-1] != N_SCALES:
        raise DataError(f"pitch spectrogram needs {N_SCALES} components")
    if gains is None:
        gains = DEFAULT_ICWT_GAINS
    return comps @ (scale_weights() * np.asarray(gains, dtype=np.float64))


def synthetic_contour(rng: np.random.Generator, length: int, frame_period: float,
                      fmin: float = 0.1, fmax: float = 6.0, n_partials: int = 6) -> np.ndarray:
    """Random band-limited zero-mean unit-variance contour (sum of sinusoids)."""
    t = np.arange(length) * frame_period
    freqs = np.exp(rng.uniform(np.log(fmin), np.log(fmax), n_partials))
    amps = rng.uniform(0.3, 1.0, n_partials)
    phases = rng.uniform(0, 2 * np.pi, n_partials)
    x = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(0)
    x -= x.mean()
    return x / x.std()


def fit_icwt_gains(frame_period: float, n_contours: int = 64, min_length: int = 128,
                   max_length: int = 600, seed: int = 0) -> np.ndarray:
    """Non-negative least-squares per-scale gains so the weighted sum reproduces the input.

    Unconstrained least squares is ill-conditioned here: the coarsest scales
    are nearly collinear on contours a few seconds long.
    """
    from scipy.optimize import nnls

    rng = np.random.default_rng(seed)
    rows, targets = [], []
    w = scale_weights()
    for _ in range(n_contours):
        length = int(rng.integers(min_length, max_length))
        x = synthetic_contour(rng, length, frame_period)
        rows.append(cwt_decompose(x, frame_period).components * w)
        targets.append(x)
    gains, _ = nnls(np.concatenate(rows), np.concatenate(targets))
    return gains
