"""Teacher-forced training: masked multi-term loss, Adam + Noam schedule, batching, checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import container
from . import tensor as tc
from .errors import ConfigError, DataError, NumericError
from .features import UtteranceFeatures
from .model import (
    AcousticModel, CorpusStats, ModelConfig, ModelOutput, VarianceTargets, scope, variance_predictor,
)
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"
LOG_COLUMNS = ("step", "lr", "total", "mel", "dur", "pitch_spec", "pitch_stats", "energy")
TERMS = LOG_COLUMNS[3:]


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_steps: int = 4000
    d_model: int = 256
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.warmup_steps < 1 or self.d_model < 1:
            raise ConfigError("warmup_steps and d_model must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or None")


@dataclass(frozen=True)
class LossWeights:
    mel: float = 1.0
    dur: float = 1.0
    pitch_spec: float = 1.0
    pitch_stats: float = 1.0
    energy: float = 1.0

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ConfigError("loss weights must be finite and >= 0")
        if not any(vals):
            raise ConfigError("loss weights cannot all be zero")


def noam_lr(step: int, cfg: OptimizerConfig) -> float:
    if step < 1:
        raise ConfigError("noam_lr is defined for step >= 1")
    return cfg.d_model**-0.5 * min(step**-0.5, step * cfg.warmup_steps**-1.5)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, weights: dict[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(t.data) for k, t in weights.items()},
                   {k: np.zeros_like(t.data) for k, t in weights.items()})


def global_grad_norm(weights: dict[str, Tensor]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(t.grad, dtype=np.float64))) for t in weights.values()))


def adam_step(weights: dict[str, Tensor], state: AdamState, lr: float, cfg: OptimizerConfig) -> float:
    """One bias-corrected Adam update in place; returns the pre-clip gradient norm."""
    for k, t in weights.items():
        if t.grad is None:
            raise NumericError(f"parameter {k} has no gradient")
        if not np.all(np.isfinite(t.grad)):
            raise NumericError(f"non-finite gradient for {k}")
    norm = global_grad_norm(weights)
    clip = 1.0
    if cfg.grad_clip is not None and norm > cfg.grad_clip:
        clip = cfg.grad_clip / norm
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, t in weights.items():
        g = t.grad * clip if clip != 1.0 else t.grad
        m = state.m[k] = b1 * state.m[k] + (1 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        upd = lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        t.data = (t.data - upd).astype(t.data.dtype, copy=False)
    return norm


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: list[str]
    phoneme_ids: np.ndarray  # [B, N]
    phoneme_mask: np.ndarray  # [B, N]
    durations: np.ndarray  # [B, N]
    frame_mask: np.ndarray  # [B, T]
    mel: np.ndarray  # [B, T, n_mels]
    energy: np.ndarray  # [B, T]
    f0: np.ndarray  # [B, T]
    pitch: np.ndarray  # [B, T]
    pitch_spec: np.ndarray  # [B, T, 10]
    pitch_stats: np.ndarray  # [B, 2] (mean, std) of log-F0
    n_phonemes: np.ndarray
    n_frames: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ids)

    def targets(self) -> VarianceTargets:
        return VarianceTargets(self.durations, self.pitch, self.energy)


def _pad(arrays, length):
    first = arrays[0]
    out = np.zeros((len(arrays), length) + first.shape[1:], dtype=first.dtype)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out


def make_batch(items: list[UtteranceFeatures], pad_phonemes: int = 0, pad_frames: int = 0) -> Batch:
    """Zero-pad to the per-batch maxima, plus optional extra padding."""
    if not items:
        raise DataError("cannot batch an empty list")
    n_ph = np.array([u.phoneme_ids.size for u in items], dtype=np.int64)
    n_fr = np.array([u.n_frames for u in items], dtype=np.int64)
    N, T = int(n_ph.max()) + pad_phonemes, int(n_fr.max()) + pad_frames
    return Batch(
        ids=[u.id for u in items],
        phoneme_ids=_pad([u.phoneme_ids for u in items], N),
        phoneme_mask=np.arange(N)[None, :] < n_ph[:, None],
        durations=_pad([u.durations for u in items], N),
        frame_mask=np.arange(T)[None, :] < n_fr[:, None],
        mel=_pad([u.mel for u in items], T),
        energy=_pad([u.energy for u in items], T),
        f0=_pad([u.f0 for u in items], T),
        pitch=_pad([u.pitch for u in items], T),
        pitch_spec=_pad([u.pitch_spec for u in items], T),
        pitch_stats=np.array([[u.pitch_mean, u.pitch_std] for u in items], dtype=np.float64),
        n_phonemes=n_ph,
        n_frames=n_fr,
    )


def unbatch(b: Batch) -> list[UtteranceFeatures]:
    out = []
    for i, uid in enumerate(b.ids):
        n, t = int(b.n_phonemes[i]), int(b.n_frames[i])
        out.append(UtteranceFeatures(
            id=uid,
            phoneme_ids=b.phoneme_ids[i, :n].copy(),
            durations=b.durations[i, :n].copy(),
            mel=b.mel[i, :t].copy(),
            energy=b.energy[i, :t].copy(),
            f0=b.f0[i, :t].copy(),
            pitch=b.pitch[i, :t].copy(),
            pitch_spec=b.pitch_spec[i, :t].copy(),
            pitch_mean=float(b.pitch_stats[i, 0]),
            pitch_std=float(b.pitch_stats[i, 1]),
        ))
    return out


def batch_order(n_items: int, n_frames, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Deterministic batches for one epoch: seeded shuffle, then sort by length within windows."""
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(n_items)
    window = batch_size * 4
    order = []
    for s in range(0, n_items, window):
        chunk = perm[s : s + window]
        order.extend(sorted(chunk.tolist(), key=lambda i: (n_frames[i], i)))
    batches = [order[s : s + batch_size] for s in range(0, n_items, batch_size)]
    rng.shuffle(batches)
    return batches


# ---------------------------------------------------------------------------
# loss


def _masked_mean(x: Tensor, mask: np.ndarray, per_position: int = 1) -> Tensor:
    count = int(mask.sum()) * per_position
    if count == 0:
        raise DataError("loss over an empty mask")
    return tc.scale(tc.reduce_sum(x), 1.0 / count)


def _target(arr, mask, dtype):
    m = mask if arr.ndim == mask.ndim else mask[..., None]
    return Tensor(np.where(m, arr, 0).astype(dtype))


def total_loss(out: ModelOutput, batch: Batch, stats: CorpusStats,
               w: LossWeights = LossWeights()) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the five masked terms; returns (total tensor, per-term floats).

    Targets are compared in the model's training space: z-normalized mel,
    ln(d + 1) durations, scale-normalized pitch spectrogram and min-max
    normalized energy.
    """
    dt = out.mel.dtype
    fm, pm = batch.frame_mask, batch.phoneme_mask
    ad = out.adaptor
    if ad.frame_mask.shape != fm.shape or not np.array_equal(ad.frame_mask, fm):
        raise DataError("model frame mask does not match the batch")

    mel_t = _target(stats.normalize_mel(batch.mel), fm, dt)
    mel = _masked_mean(tc.abs_(tc.masked_zero(tc.sub(out.mel, mel_t), fm)), fm, out.mel.shape[-1])

    dur_t = _target(np.log(batch.durations + 1.0), pm, dt)
    d = tc.mul(tc.sub(ad.log_duration, dur_t), Tensor(pm.astype(dt)))
    dur = _masked_mean(tc.square(d), pm)

    spec_t = _target(batch.pitch_spec / stats.pitch_spec_std, fm, dt)
    spec = _masked_mean(tc.square(tc.masked_zero(tc.sub(ad.pitch_spec, spec_t), fm)), fm, ad.pitch_spec.shape[-1])

    B = batch.size
    mean_t = Tensor(batch.pitch_stats[:, 0].astype(dt))
    std_t = Tensor(batch.pitch_stats[:, 1].astype(dt))
    pstats = tc.scale(tc.add(tc.reduce_sum(tc.square(tc.sub(ad.pitch_mean, mean_t))),
                             tc.reduce_sum(tc.square(tc.sub(ad.pitch_std, std_t)))), 1.0 / (2 * B))

    en_t = _target(stats.normalize_energy(batch.energy), fm, dt)
    e = tc.mul(tc.sub(ad.energy, en_t), Tensor(fm.astype(dt)))
    energy = _masked_mean(tc.square(e), fm)

    terms = {"mel": mel, "dur": dur, "pitch_spec": spec, "pitch_stats": pstats, "energy": energy}
    total = None
    for name, t in terms.items():
        wt = getattr(w, name)
        if wt == 0:
            continue
        part = tc.scale(t, wt)
        total = part if total is None else tc.add(total, part)
    return total, {k: float(v.data) for k, v in terms.items()}


def forward_loss(model: AcousticModel, batch: Batch, w: LossWeights = LossWeights(), training: bool = False,
                 rng=None):
    out = model.forward(batch.phoneme_ids, batch.phoneme_mask, batch.targets(), mode="train",
                        training=training, rng=rng)
    total, parts = total_loss(out, batch, model.stats, w)
    return total, parts, out


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    stats: CorpusStats
    weights: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    seed: int
    symbols: list[str] = field(default_factory=list)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    audio: dict = field(default_factory=dict)

    def model(self) -> AcousticModel:
        w = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.weights.items()}
        return AcousticModel(self.model_config, self.stats, w)

    @classmethod
    def from_training(cls, model: AcousticModel, state: AdamState, seed: int, symbols=(),
                      optimizer: OptimizerConfig = OptimizerConfig(), audio: dict | None = None) -> "Checkpoint":
        return cls(model.cfg, model.stats,
                   {k: t.data.copy() for k, t in model.weights.items()},
                   {k: v.copy() for k, v in state.m.items()},
                   {k: v.copy() for k, v in state.v.items()},
                   state.step, seed, list(symbols), optimizer, dict(audio or {}))

    def adam_state(self) -> AdamState:
        return AdamState({k: v.copy() for k, v in self.adam_m.items()},
                         {k: v.copy() for k, v in self.adam_v.items()}, self.step)


def save_checkpoint(c: Checkpoint, path) -> None:
    arrays = {}
    for k, v in c.weights.items():
        arrays[f"w/{k}"] = v
    for k, v in c.adam_m.items():
        arrays[f"m/{k}"] = v
    for k, v in c.adam_v.items():
        arrays[f"v/{k}"] = v
    meta = {
        "model_config": c.model_config.to_dict(),
        "stats": c.stats.to_dict(),
        "step": c.step,
        "seed": c.seed,
        "symbols": c.symbols,
        "optimizer": asdict(c.optimizer),
        "audio": c.audio,
        "order": list(c.weights),
    }
    container.write_container(path, arrays, meta, kind=CHECKPOINT_KIND)


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = container.read_container(path, kind=CHECKPOINT_KIND)
    try:
        order = meta["order"]
        return Checkpoint(
            model_config=ModelConfig.from_dict(meta["model_config"]),
            stats=CorpusStats.from_dict(meta["stats"]),
            weights={k: arrays[f"w/{k}"] for k in order},
            adam_m={k: arrays[f"m/{k}"] for k in order},
            adam_v={k: arrays[f"v/{k}"] for k in order},
            step=int(meta["step"]),
            seed=int(meta["seed"]),
            symbols=list(meta["symbols"]),
            optimizer=OptimizerConfig(**meta["optimizer"]),
            audio=dict(meta["audio"]),
        )
    except KeyError as e:
        raise DataError(f"{path}: checkpoint is missing {e}") from e


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 1


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    stopped_early: bool = False


def _steps_per_epoch(n_items: int, batch_size: int) -> int:
    return -(-n_items // batch_size)


def _read_log(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as f:
        rows = [r for r in csv.DictReader(f)]
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows if int(r["step"]) <= upto]


def _write_log(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(LOG_COLUMNS)
        for r in rows:
            wr.writerow([r["step"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])


def train(features: list[UtteranceFeatures], model: AcousticModel, opt: OptimizerConfig = OptimizerConfig(),
          weights: LossWeights = LossWeights(), cfg: TrainConfig = TrainConfig(), out_dir=None,
          resume: Checkpoint | None = None, symbols=(), audio: dict | None = None,
          callback: Callable[[int, dict, AcousticModel], bool] | None = None) -> TrainResult:
    """Seeded, resumable loop. Batches and dropout masks are a pure function of (seed, step),
    so a resumed run follows the same trajectory as an uninterrupted one.

    ``callback(step, row, model)`` may return True to stop early. A non-finite
    loss raises :class:`NumericError`; the last checkpoint on disk is left intact.
    """
    if not features:
        raise DataError("no utterances to train on")
    if cfg.steps < 0:
        raise ConfigError("steps must be >= 0")
    state = AdamState.zeros_like(model.weights)
    if resume is not None:
        model = resume.model()
        state = resume.adam_state()
    out = Path(out_dir) if out_dir is not None else None
    log_path = out / "train_log.csv" if out is not None else None
    history = _read_log(log_path, state.step) if log_path is not None else []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def snapshot():
        return Checkpoint.from_training(model, state, cfg.seed, symbols, opt, audio)

    def persist():
        if out is not None:
            save_checkpoint(snapshot(), out / "checkpoint.vtc")
            _write_log(log_path, history)

    n_frames = [u.n_frames for u in features]
    spe = _steps_per_epoch(len(features), cfg.batch_size)
    cached_epoch, epoch_batches = None, None
    params = model.parameters()
    stopped = False
    if cfg.steps == 0 or state.step == 0:
        persist()
    while state.step < cfg.steps:
        step = state.step + 1
        epoch, pos = divmod(step - 1, spe)
        if epoch != cached_epoch:
            epoch_batches = batch_order(len(features), n_frames, cfg.batch_size, cfg.seed, epoch)
            cached_epoch = epoch
        batch = make_batch([features[i] for i in epoch_batches[pos]])
        rng = np.random.default_rng([cfg.seed, step, 1])

        for p in params:
            p.zero_grad()
        total, parts, _ = forward_loss(model, batch, weights, training=True, rng=rng)
        if not math.isfinite(float(total.data)):
            raise NumericError(f"non-finite loss at step {step}; last good checkpoint kept")
        tc.backward(total, params)
        lr = noam_lr(step, opt)
        adam_step(model.weights, state, lr, opt)
        row = {"step": step, "lr": lr, "total": float(total.data), **parts}
        if step % cfg.log_every == 0 or step == cfg.steps:
            history.append(row)
        if callback is not None and callback(step, row, model):
            stopped = True
        if step % cfg.checkpoint_every == 0 or step == cfg.steps or stopped:
            persist()
        if stopped:
            break
    return TrainResult(snapshot(), history, stopped)


def train_mel_mae(model: AcousticModel, features: list[UtteranceFeatures], batch_size: int = 16) -> float:
    """Teacher-forced mel MAE on normalized mels, eval mode, over all real frames."""
    total, count = 0.0, 0
    with tc.no_grad():
        for s in range(0, len(features), batch_size):
            b = make_batch(features[s : s + batch_size])
            out = model.forward(b.phoneme_ids, b.phoneme_mask, b.targets(), mode="train")
            err = np.abs(out.mel.data - model.stats.normalize_mel(b.mel))
            total += float(err[b.frame_mask].sum())
            count += int(b.frame_mask.sum()) * err.shape[-1]
    return total / count


def duration_mae(model: AcousticModel, features: list[UtteranceFeatures], batch_size: int = 16) -> float:
    """Mean |predicted frames - true frames| per phoneme with predicted durations rounded."""
    total, count = 0.0, 0
    with tc.no_grad():
        for s in range(0, len(features), batch_size):
            b = make_batch(features[s : s + batch_size])
            h = model.encode(b.phoneme_ids, b.phoneme_mask)
            ld = variance_predictor(h, scope(model.weights, "duration_predictor"), model.cfg, b.phoneme_mask)
            pred = np.maximum(np.floor(np.exp(ld.data[..., 0].astype(np.float64)) - 1.0 + 0.5), 0)
            total += float(np.abs(pred - b.durations)[b.phoneme_mask].sum())
            count += int(b.phoneme_mask.sum())
    return total / count
