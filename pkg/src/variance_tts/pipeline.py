"""End-to-end operations on checkpoints and feature caches: synthesis, evaluation, pitch dumps."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .dsp import AudioConfig, MelSpectrogram, Waveform, energy_from_stft, griffin_lim, stft
from .errors import DataError
from .features import UtteranceFeatures, phonemes_to_ids
from .metrics import EvalReport, ProsodySample, evaluate_corpus
from .model import AcousticModel, VarianceControls
from .pitch import estimate_f0
from .training import Checkpoint

MEL_KIND = "mel"


@dataclass
class SynthesisResult:
    mel: MelSpectrogram  # log mel, denormalized
    durations: np.ndarray  # frames per phoneme after control and rounding
    durations_raw: np.ndarray | None  # exp(pred) - 1 before control, None when forced
    pitch: np.ndarray  # applied pre-quantization contour, Hz
    energy: np.ndarray  # applied pre-quantization energy
    pitch_bins: np.ndarray
    energy_bins: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.mel.n_frames

    def seconds(self) -> float:
        return self.n_frames * self.mel.config.frame_period


def audio_config_of(ck: Checkpoint) -> AudioConfig:
    return AudioConfig(**ck.audio) if ck.audio else AudioConfig()


def synthesize(model: AcousticModel, phoneme_ids, audio: AudioConfig,
               controls: VarianceControls | None = None, durations=None) -> SynthesisResult:
    out = model.infer(np.asarray(phoneme_ids, dtype=np.int64), controls, durations)
    ad = out.adaptor
    T = int(ad.frame_mask[0].sum())
    mel = model.stats.denormalize_mel(out.mel.data[0, :T].astype(np.float64))
    return SynthesisResult(
        mel=MelSpectrogram(mel, audio),
        durations=ad.durations[0].copy(),
        durations_raw=None if ad.durations_raw is None else ad.durations_raw[0].copy(),
        pitch=ad.pitch_applied[0, :T].copy(),
        energy=ad.energy_applied[0, :T].copy(),
        pitch_bins=ad.pitch_bins[0, :T].copy(),
        energy_bins=ad.energy_bins[0, :T].copy(),
    )


def synthesize_text(ck: Checkpoint, phonemes: list[str], controls: VarianceControls | None = None) -> SynthesisResult:
    ids = phonemes_to_ids(phonemes, ck.symbols)
    if ids.size == 0:
        raise DataError("empty phoneme sequence")
    return synthesize(ck.model(), ids, audio_config_of(ck), controls)


def save_mel(path, r: SynthesisResult) -> None:
    arrays = {"mel": r.mel.frames, "durations": r.durations, "pitch": r.pitch, "energy": r.energy}
    if r.durations_raw is not None:
        arrays["durations_raw"] = r.durations_raw
    container.write_container(path, arrays, {"frame_period": r.mel.config.frame_period}, kind=MEL_KIND)


def load_mel(path) -> dict[str, np.ndarray]:
    arrays, _ = container.read_container(path, kind=MEL_KIND)
    return arrays


def write_mel_csv(path, mel: np.ndarray) -> None:
    with Path(path).open("w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frame"] + [f"mel{i}" for i in range(mel.shape[1])])
        for t, row in enumerate(mel):
            wr.writerow([t] + [repr(float(v)) for v in row])


def write_pitch_csv(path, f0) -> int:
    """Voiced-only ``frame,f0`` rows; returns the number of rows written."""
    f0 = np.asarray(f0, dtype=np.float64)
    n = 0
    with Path(path).open("w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frame", "f0"])
        for t in np.nonzero(f0 > 0)[0]:
            wr.writerow([int(t), repr(float(f0[t]))])
            n += 1
    return n


def read_pitch_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as f:
        rows = list(csv.DictReader(f))
    return (np.array([int(r["frame"]) for r in rows], dtype=np.int64),
            np.array([float(r["f0"]) for r in rows], dtype=np.float64))


# ---------------------------------------------------------------------------
# evaluation


def _audio_prosody(mel: MelSpectrogram, n_iter: int) -> ProsodySample:
    w: Waveform = griffin_lim(mel, n_iter)
    cfg = mel.config
    return ProsodySample(estimate_f0(w, cfg).f0, energy_from_stft(stft(w, cfg)))


def _fit_length(x: np.ndarray, T: int) -> np.ndarray:
    if x.size >= T:
        return x[:T]
    return np.concatenate([x, np.full(T - x.size, x[-1] if x.size else 0.0)])


def run_eval(ck: Checkpoint, features: list[UtteranceFeatures], source: str = "audio",
             gl_iters: int = 60) -> EvalReport:
    """Pitch metrics from fully predicted synthesis; energy MAE with ground-truth durations.

    ``source="audio"`` measures F0 and energy on Griffin-Lim audio, the way a
    listener-facing system would be measured. ``source="model"`` reads the
    model's own applied pitch and energy, treating every frame as voiced.
    """
    if source not in ("audio", "model"):
        raise DataError(f"eval source must be 'audio' or 'model', got {source!r}")
    model = ck.model()
    audio = audio_config_of(ck)
    pred, ref = {}, {}
    for u in features:
        free = synthesize(model, u.phoneme_ids, audio)
        forced = synthesize(model, u.phoneme_ids, audio, durations=u.durations)
        if source == "audio":
            f0 = _audio_prosody(free.mel, gl_iters).f0
            energy = _fit_length(_audio_prosody(forced.mel, gl_iters).energy, u.n_frames)
        else:
            f0, energy = free.pitch, forced.energy
        pred[u.id] = ProsodySample(f0, energy)
        ref[u.id] = ProsodySample(u.f0, u.energy)
    return evaluate_corpus(pred, ref, (ck.stats.energy.lo, ck.stats.energy.hi))


def reference_report(features: list[UtteranceFeatures], energy_range) -> EvalReport:
    """Ground truth scored against itself; a smoke test of the metric plumbing."""
    ref = {u.id: ProsodySample(u.f0, u.energy) for u in features}
    return evaluate_corpus(ref, ref, energy_range)
