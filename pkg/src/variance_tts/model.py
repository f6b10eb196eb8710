"""The acoustic model: phoneme encoder, variance adaptor and mel decoder.

Everything here works on padded batches ``[B, N, H]`` / ``[B, T, H]`` with
boolean masks; single utterances are a batch of one. Weights live in a flat,
ordered ``{name: Tensor}`` map so checkpoints and optimizers can treat them
uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

from . import tensor as tc
from .errors import ConfigError, DataError, NumericError
from .pitch import DEFAULT_ICWT_GAINS, N_SCALES, denormalize, icwt_recompose
from .tensor import Tensor

STD_HEAD_FLOOR = 1e-4


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int = 4
    decoder_layers: int = 4
    hidden: int = 256
    heads: int = 2
    conv_kernels: tuple = (9, 1)
    conv_filter: int = 1024
    predictor_kernel: int = 3
    predictor_filter: int = 256
    predictor_dropout: float = 0.5
    enc_dec_dropout: float = 0.1
    n_bins: int = 256
    n_mels: int = 80
    vocab_size: int = 76
    cwt_scales: int = N_SCALES
    # energy predictor reads the hidden sequence after the pitch embedding is added
    energy_sees_pitch: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ConfigError("hidden must be divisible by heads")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        if any(k % 2 == 0 for k in tuple(self.conv_kernels) + (self.predictor_kernel,)):
            raise ConfigError("convolution kernels must be odd")
        if self.cwt_scales != N_SCALES:
            raise ConfigError(f"cwt_scales must be {N_SCALES}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        object.__setattr__(self, "conv_kernels", tuple(int(k) for k in self.conv_kernels))

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Small CPU-trainable configuration."""
        base = dict(
            encoder_layers=2, decoder_layers=2, hidden=64, heads=2, conv_kernels=(9, 1),
            conv_filter=256, predictor_filter=64, predictor_dropout=0.1, enc_dec_dropout=0.0,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["conv_kernels"] = list(self.conv_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class QuantizerSpec:
    kind: str  # "log_scale_pitch" | "uniform_energy"
    lo: float
    hi: float
    n_bins: int = 256

    def __post_init__(self):
        if self.kind not in ("log_scale_pitch", "uniform_energy"):
            raise ConfigError(f"unknown quantizer kind {self.kind!r}")
        if not self.lo < self.hi:
            raise ConfigError("quantizer needs lo < hi")
        if self.kind == "log_scale_pitch" and self.lo <= 0:
            raise ConfigError("log-scale quantizer needs lo > 0")
        if self.n_bins < 2:
            raise ConfigError("quantizer needs at least 2 bins")

    def edges(self) -> np.ndarray:
        """The ``n_bins + 1`` bin boundaries in input units."""
        if self.kind == "log_scale_pitch":
            return np.exp(np.linspace(math.log(self.lo), math.log(self.hi), self.n_bins + 1))
        return np.linspace(self.lo, self.hi, self.n_bins + 1)


def quantize(x, spec: QuantizerSpec):
    """Bin index in ``[0, n_bins)``; inputs are clamped to ``[lo, hi]``."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("cannot quantize non-finite values")
    arr = np.clip(arr, spec.lo, spec.hi)
    if spec.kind == "log_scale_pitch":
        lo, hi = math.log(spec.lo), math.log(spec.hi)
        pos = (np.log(arr) - lo) / (hi - lo)
    else:
        pos = (arr - spec.lo) / (spec.hi - spec.lo)
    bins = np.minimum(np.floor(pos * spec.n_bins).astype(np.int64), spec.n_bins - 1)
    bins = np.maximum(bins, 0)
    return int(bins) if bins.ndim == 0 else bins


@dataclass
class CorpusStats:
    """Corpus-level constants fixed at extraction time and stored with the model."""

    pitch: QuantizerSpec
    energy: QuantizerSpec
    mel_mean: np.ndarray
    mel_std: np.ndarray
    icwt_gains: tuple = DEFAULT_ICWT_GAINS
    # per-scale std of the wavelet components; the raw components are ~1e-3
    # and would contribute almost nothing to an unscaled MSE
    pitch_spec_std: np.ndarray = field(default_factory=lambda: np.ones(N_SCALES))

    def normalize_mel(self, mel):
        return (np.asarray(mel) - self.mel_mean) / self.mel_std

    def denormalize_mel(self, mel):
        return np.asarray(mel) * self.mel_std + self.mel_mean

    def normalize_energy(self, e):
        return (np.asarray(e) - self.energy.lo) / (self.energy.hi - self.energy.lo)

    def denormalize_energy(self, u):
        return self.energy.lo + np.asarray(u) * (self.energy.hi - self.energy.lo)

    def to_dict(self) -> dict:
        return {
            "pitch": [self.pitch.kind, self.pitch.lo, self.pitch.hi, self.pitch.n_bins],
            "energy": [self.energy.kind, self.energy.lo, self.energy.hi, self.energy.n_bins],
            "mel_mean": [float(v) for v in self.mel_mean],
            "mel_std": [float(v) for v in self.mel_std],
            "icwt_gains": [float(g) for g in self.icwt_gains],
            "pitch_spec_std": [float(v) for v in self.pitch_spec_std],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusStats":
        return cls(
            QuantizerSpec(*d["pitch"]),
            QuantizerSpec(*d["energy"]),
            np.array(d["mel_mean"], dtype=np.float64),
            np.array(d["mel_std"], dtype=np.float64),
            tuple(d["icwt_gains"]),
            np.array(d["pitch_spec_std"], dtype=np.float64),
        )


@dataclass(frozen=True)
class VarianceControls:
    pitch_mult: float = 1.0
    energy_mult: float = 1.0
    duration_mult: float = 1.0

    def __post_init__(self):
        for name in ("pitch_mult", "energy_mult", "duration_mult"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")


@dataclass
class VarianceTargets:
    """Ground-truth inputs for teacher forcing, batched and zero-padded."""

    durations: np.ndarray  # [B, N] int
    pitch_hz: np.ndarray  # [B, T] gap-filled F0
    energy: np.ndarray  # [B, T] raw frame energy


@dataclass
class AdaptorOutput:
    hidden: Tensor  # [B, T, H]
    frame_mask: np.ndarray  # [B, T]
    log_duration: Tensor  # [B, N]
    pitch_spec: Tensor  # [B, T, 10], in units of CorpusStats.pitch_spec_std
    pitch_mean: Tensor  # [B]
    pitch_std: Tensor  # [B]
    energy: Tensor  # [B, T], normalized units
    durations: np.ndarray  # [B, N] frames actually used
    durations_raw: np.ndarray | None = None  # [B, N] exp(pred) - 1, before control/rounding
    pitch_applied: np.ndarray | None = None  # [B, T] Hz fed to the quantizer
    pitch_bins: np.ndarray | None = None
    energy_applied: np.ndarray | None = None
    energy_bins: np.ndarray | None = None


@dataclass
class ModelOutput:
    mel: Tensor  # [B, T, n_mels], normalized
    adaptor: AdaptorOutput

    @property
    def frame_mask(self):
        return self.adaptor.frame_mask


# ---------------------------------------------------------------------------
# weights


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_weights(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    dt = np.dtype(cfg.dtype)
    H, F = cfg.hidden, cfg.conv_filter
    w: dict[str, np.ndarray] = {}

    def linear(name, fin, fout):
        w[f"{name}.w"] = _glorot(rng, (fin, fout), fin, fout, dt)
        w[f"{name}.b"] = np.zeros(fout, dt)

    def conv(name, k, fin, fout):
        w[f"{name}.w"] = _glorot(rng, (k, fin, fout), k * fin, fout, dt)
        w[f"{name}.b"] = np.zeros(fout, dt)

    def norm(name, c):
        w[f"{name}.gamma"] = np.ones(c, dt)
        w[f"{name}.beta"] = np.zeros(c, dt)

    def embedding(name, n):
        w[name] = (rng.standard_normal((n, H)) * H**-0.5).astype(dt)

    embedding("phoneme_embedding", cfg.vocab_size)
    for stack, n in (("encoder", cfg.encoder_layers), ("decoder", cfg.decoder_layers)):
        for i in range(n):
            p = f"{stack}.{i}"
            for m in ("q", "k", "v", "o"):
                linear(f"{p}.attn.{m}", H, H)
            norm(f"{p}.ln1", H)
            conv(f"{p}.conv1", cfg.conv_kernels[0], H, F)
            conv(f"{p}.conv2", cfg.conv_kernels[1], F, H)
            norm(f"{p}.ln2", H)
    P, K = cfg.predictor_filter, cfg.predictor_kernel
    for name, out in (("duration_predictor", 1), ("pitch_predictor", cfg.cwt_scales), ("energy_predictor", 1)):
        conv(f"{name}.conv1", K, H, P)
        norm(f"{name}.ln1", P)
        conv(f"{name}.conv2", K, P, P)
        norm(f"{name}.ln2", P)
        linear(f"{name}.linear", P, out)
    linear("pitch_predictor.stats", P, 2)
    embedding("pitch_embedding", cfg.n_bins)
    embedding("energy_embedding", cfg.n_bins)
    linear("mel_linear", H, cfg.n_mels)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in w.items()}


def count_parameters(weights) -> int:
    return int(sum(t.size for t in weights.values()))


def scope(weights: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in weights.items() if k.startswith(prefix + ".")}


@lru_cache(maxsize=32)
def _sinusoid_table(T: int, H: int, dtype: str) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(H)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / H)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)
    pe.setflags(write=False)
    return pe


def positional_encoding(B: int, T: int, H: int, dtype) -> np.ndarray:
    return np.broadcast_to(_sinusoid_table(T, H, np.dtype(dtype).name), (B, T, H))


# ---------------------------------------------------------------------------
# building blocks


def _as_batch(x: Tensor, mask):
    if x.ndim == 2:
        m = np.ones(x.shape[0], bool) if mask is None else np.asarray(mask, bool)
        return tc.reshape(x, (1,) + x.shape), m[None], True
    m = np.ones(x.shape[:2], bool) if mask is None else np.asarray(mask, bool)
    return x, m, False


def multi_head_attention(x: Tensor, mask: np.ndarray, p: dict, heads: int) -> Tensor:
    B, T, H = x.shape
    dk = H // heads

    def split(t):
        return tc.transpose(tc.reshape(t, (B, T, heads, dk)), (0, 2, 1, 3))

    q = split(tc.linear(x, p["attn.q.w"], p["attn.q.b"]))
    k = split(tc.linear(x, p["attn.k.w"], p["attn.k.b"]))
    v = split(tc.linear(x, p["attn.v.w"], p["attn.v.b"]))
    scores = tc.scale(tc.matmul(q, tc.swap_last(k)), 1.0 / math.sqrt(dk))
    attn = tc.softmax_rows(scores, mask[:, None, None, :])
    ctx = tc.reshape(tc.transpose(tc.matmul(attn, v), (0, 2, 1, 3)), (B, T, H))
    return tc.linear(ctx, p["attn.o.w"], p["attn.o.b"])


def fft_block(x: Tensor, mask, p: dict, cfg: ModelConfig, training: bool = False, rng=None) -> Tensor:
    """Self-attention and a two-layer convolution, each with residual + layer norm.

    Padded frames are zeroed after every sublayer so they cannot leak into
    real frames through the convolution.
    """
    x, mask, squeeze = _as_batch(x, mask)
    if not mask.any(axis=-1).all():
        raise DataError("fft_block: every sequence needs at least one unmasked frame")
    a = multi_head_attention(x, mask, p, cfg.heads)
    a = tc.dropout(a, cfg.enc_dec_dropout, training, rng)
    x = tc.masked_zero(tc.layer_norm(tc.add(x, a), p["ln1.gamma"], p["ln1.beta"]), mask)
    y = tc.relu(tc.conv1d(x, p["conv1.w"], p["conv1.b"]))
    y = tc.conv1d(y, p["conv2.w"], p["conv2.b"])
    y = tc.dropout(y, cfg.enc_dec_dropout, training, rng)
    x = tc.masked_zero(tc.layer_norm(tc.add(x, y), p["ln2.gamma"], p["ln2.beta"]), mask)
    return tc.reshape(x, x.shape[1:]) if squeeze else x


def _predictor_trunk(h: Tensor, mask, p: dict, cfg: ModelConfig, training, rng) -> Tensor:
    for i in (1, 2):
        h = tc.relu(tc.conv1d(h, p[f"conv{i}.w"], p[f"conv{i}.b"]))
        h = tc.layer_norm(h, p[f"ln{i}.gamma"], p[f"ln{i}.beta"])
        h = tc.dropout(h, cfg.predictor_dropout, training, rng)
        h = tc.masked_zero(h, mask)
    return h


def variance_predictor(h: Tensor, p: dict, cfg: ModelConfig, mask=None, training: bool = False, rng=None) -> Tensor:
    """conv-ReLU-LN-dropout twice, then a linear projection: ``[B, L, out]``."""
    h, mask, squeeze = _as_batch(h, mask)
    trunk = _predictor_trunk(h, mask, p, cfg, training, rng)
    out = tc.masked_zero(tc.linear(trunk, p["linear.w"], p["linear.b"]), mask)
    return tc.reshape(out, out.shape[1:]) if squeeze else out


def pitch_predictor(h: Tensor, p: dict, cfg: ModelConfig, mask=None, training: bool = False, rng=None):
    """Per-frame pitch spectrogram plus utterance-level (mean, std) of log-F0.

    The global head averages the trunk output over unmasked frames; std goes
    through softplus with a small floor to stay positive.
    """
    h, mask, squeeze = _as_batch(h, mask)
    trunk = _predictor_trunk(h, mask, p, cfg, training, rng)
    spec = tc.masked_zero(tc.linear(trunk, p["linear.w"], p["linear.b"]), mask)
    B, _, F = trunk.shape
    counts = mask.sum(axis=1).astype(trunk.dtype)
    inv = np.broadcast_to((1.0 / counts)[:, None], (B, F)).astype(trunk.dtype)
    pooled = tc.mul(tc.reduce_sum(trunk, axis=1), Tensor(inv))
    stats = tc.linear(pooled, p["stats.w"], p["stats.b"])
    mean = stats[:, 0]
    std = tc.add(tc.softplus(stats[:, 1]), STD_HEAD_FLOOR)
    if squeeze:
        return tc.reshape(spec, spec.shape[1:]), tc.reshape(mean, ()), tc.reshape(std, ())
    return spec, mean, std


def length_regulate(h: Tensor, durations, max_frames: int | None = None) -> tuple[Tensor, np.ndarray]:
    """Repeat phoneme ``i`` of each sequence ``d_i`` times; returns (frames, frame mask).

    ``max_frames`` pads the frame axis beyond the longest sequence.
    """
    d = np.asarray(durations)
    if np.any(d < 0):
        raise DataError("negative duration")
    d = d.astype(np.int64)
    squeeze = h.ndim == 2
    if squeeze:
        h = tc.reshape(h, (1,) + h.shape)
        d = d[None]
    B, N, H = h.shape
    if d.shape != (B, N):
        raise DataError(f"durations {d.shape} do not match hidden {h.shape[:2]}")
    totals = d.sum(axis=1)
    T = int(totals.max()) if B else 0
    if max_frames is not None:
        if max_frames < T:
            raise DataError(f"max_frames {max_frames} is shorter than the longest sequence ({T})")
        T = max_frames
    idx = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    for b in range(B):
        rows = np.repeat(np.arange(N), d[b])
        idx[b, : rows.size] = rows + b * N
        mask[b, : rows.size] = True
    out = tc.embedding_lookup(tc.reshape(h, (B * N, H)), idx)
    out = tc.masked_zero(out, mask)
    if squeeze:
        return tc.reshape(out, (T, H)), mask[0]
    return out, mask


def round_half_up(x):
    return np.floor(np.asarray(x) + 0.5)


# ---------------------------------------------------------------------------
# model


class AcousticModel:
    def __init__(self, cfg: ModelConfig, stats: CorpusStats, weights: dict[str, Tensor] | None = None,
                 seed: int = 0):
        self.cfg = cfg
        self.stats = stats
        self.weights = weights if weights is not None else init_weights(cfg, seed)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def n_parameters(self) -> int:
        return count_parameters(self.weights)

    # -- encoder / decoder -------------------------------------------------

    def encode(self, phoneme_ids, mask=None, training: bool = False, rng=None) -> Tensor:
        ids = np.asarray(phoneme_ids, dtype=np.int64)
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None]
        if mask is None:
            mask = np.ones(ids.shape, bool)
        mask = np.asarray(mask, bool).reshape(ids.shape)
        if np.any(ids[mask] < 0) or np.any(ids[mask] >= self.cfg.vocab_size):
            raise DataError("phoneme id outside the vocabulary")
        B, N = ids.shape
        x = tc.embedding_lookup(self.weights["phoneme_embedding"], np.where(mask, ids, 0))
        x = tc.add(x, Tensor(positional_encoding(B, N, self.cfg.hidden, self.dtype)))
        x = tc.masked_zero(x, mask)
        for i in range(self.cfg.encoder_layers):
            x = fft_block(x, mask, scope(self.weights, f"encoder.{i}"), self.cfg, training, rng)
        return tc.reshape(x, x.shape[1:]) if squeeze else x

    def decode_mel(self, h: Tensor, mask=None, training: bool = False, rng=None) -> Tensor:
        h, mask, squeeze = _as_batch(h, mask)
        B, T, H = h.shape
        x = tc.masked_zero(tc.add(h, Tensor(positional_encoding(B, T, H, self.dtype))), mask)
        for i in range(self.cfg.decoder_layers):
            x = fft_block(x, mask, scope(self.weights, f"decoder.{i}"), self.cfg, training, rng)
        mel = tc.masked_zero(tc.linear(x, self.weights["mel_linear.w"], self.weights["mel_linear.b"]), mask)
        return tc.reshape(mel, mel.shape[1:]) if squeeze else mel

    # -- variance adaptor --------------------------------------------------

    def _embed_bins(self, h: Tensor, table: str, bins: np.ndarray, mask) -> Tensor:
        emb = tc.masked_zero(tc.embedding_lookup(self.weights[table], bins), mask)
        return tc.add(h, emb)

    def variance_adaptor(self, h: Tensor, phoneme_mask, targets: VarianceTargets | None = None,
                         controls: VarianceControls | None = None, mode: str = "train",
                         training: bool = False, rng=None, durations=None) -> AdaptorOutput:
        """Duration -> length regulation -> pitch -> energy.

        ``mode="train"`` teacher-forces every variance input from ``targets``.
        ``mode="infer"`` uses the predictors, scaled by ``controls``;
        ``durations`` optionally forces frame counts in inference.
        """
        if mode not in ("train", "infer"):
            raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
        if mode == "train" and targets is None:
            raise ConfigError("train mode requires variance targets")
        controls = controls or VarianceControls()
        cfg, st = self.cfg, self.stats
        pmask = np.asarray(phoneme_mask, bool)

        log_dur = variance_predictor(h, scope(self.weights, "duration_predictor"), cfg, pmask, training, rng)
        log_dur = tc.reshape(log_dur, log_dur.shape[:2])

        raw = None
        if mode == "train":
            dur = np.asarray(targets.durations, dtype=np.int64)
        elif durations is not None:
            dur = np.asarray(durations, dtype=np.int64).reshape(pmask.shape)
        else:
            raw = np.where(pmask, np.exp(log_dur.data.astype(np.float64)) - 1.0, 0.0)
            dur = np.maximum(round_half_up(raw * controls.duration_mult), 0).astype(np.int64)
            dur = np.where(pmask, dur, 0)
        if np.any(dur.sum(axis=1) == 0):
            raise DataError("degenerate duration: an utterance has zero total frames")

        x, fmask = length_regulate(h, dur, None if targets is None else np.shape(targets.pitch_hz)[1])

        pitch_spec, pitch_mean, pitch_std = pitch_predictor(
            x, scope(self.weights, "pitch_predictor"), cfg, fmask, training, rng)
        if mode == "train":
            pitch_hz = np.asarray(targets.pitch_hz, dtype=np.float64)
            pitch_applied = None
        else:
            pitch_hz = np.zeros(fmask.shape)
            for b in range(fmask.shape[0]):
                T = int(fmask[b].sum())
                comps = pitch_spec.data[b, :T].astype(np.float64) * st.pitch_spec_std
                norm = icwt_recompose(comps, st.icwt_gains)
                pitch_hz[b, :T] = denormalize(norm, float(pitch_mean.data[b]), float(pitch_std.data[b]))
            pitch_hz = pitch_hz * controls.pitch_mult
            pitch_applied = pitch_hz
        pitch_bins = np.where(fmask, quantize(np.where(fmask, pitch_hz, st.pitch.lo), st.pitch), 0)
        with_pitch = self._embed_bins(x, "pitch_embedding", pitch_bins, fmask)

        energy_in = with_pitch if cfg.energy_sees_pitch else x
        energy = variance_predictor(energy_in, scope(self.weights, "energy_predictor"), cfg, fmask, training, rng)
        energy = tc.reshape(energy, energy.shape[:2])
        if mode == "train":
            energy_raw = np.asarray(targets.energy, dtype=np.float64)
            energy_applied = None
        else:
            energy_raw = st.denormalize_energy(energy.data.astype(np.float64)) * controls.energy_mult
            energy_applied = np.where(fmask, energy_raw, 0.0)
        energy_bins = np.where(fmask, quantize(np.where(fmask, energy_raw, st.energy.lo), st.energy), 0)
        out = self._embed_bins(with_pitch, "energy_embedding", energy_bins, fmask)

        return AdaptorOutput(
            hidden=out, frame_mask=fmask, log_duration=log_dur, pitch_spec=pitch_spec,
            pitch_mean=pitch_mean, pitch_std=pitch_std, energy=energy, durations=dur,
            durations_raw=raw, pitch_applied=pitch_applied, pitch_bins=pitch_bins,
            energy_applied=energy_applied, energy_bins=energy_bins,
        )

    def forward(self, phoneme_ids, phoneme_mask=None, targets: VarianceTargets | None = None,
                controls: VarianceControls | None = None, mode: str = "train",
                training: bool = False, rng=None, durations=None) -> ModelOutput:
        ids = np.asarray(phoneme_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
            phoneme_mask = None if phoneme_mask is None else np.asarray(phoneme_mask, bool)[None]
            if targets is not None:
                targets = VarianceTargets(
                    np.asarray(targets.durations)[None], np.asarray(targets.pitch_hz)[None],
                    np.asarray(targets.energy)[None])
        if phoneme_mask is None:
            phoneme_mask = np.ones(ids.shape, bool)
        h = self.encode(ids, phoneme_mask, training, rng)
        ad = self.variance_adaptor(h, phoneme_mask, targets, controls, mode, training, rng, durations)
        mel = self.decode_mel(ad.hidden, ad.frame_mask, training, rng)
        return ModelOutput(mel, ad)

    def infer(self, phoneme_ids, controls: VarianceControls | None = None, durations=None) -> ModelOutput:
        """Single-utterance, eval-mode inference without recording a graph."""
        with tc.no_grad():
            return self.forward(np.asarray(phoneme_ids)[None], None, None, controls, "infer",
                                durations=None if durations is None else np.asarray(durations)[None])
