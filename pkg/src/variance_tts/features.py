"""Per-utterance training features, corpus statistics and the on-disk feature cache."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .alignment import durations_to_frames, parse_alignment
from .dsp import AudioConfig, read_audio_features
from .errors import DataError, VarianceTTSError
from .model import CorpusStats, QuantizerSpec
from .pitch import cwt_decompose, estimate_f0, icwt_gains_for, preprocess_pitch

log = logging.getLogger(__name__)

FEATURE_KIND = "features"
MEL_STD_FLOOR = 1e-3
SPEC_STD_FLOOR = 1e-6


@dataclass
class UtteranceFeatures:
    id: str
    phoneme_ids: np.ndarray  # [N] int64
    durations: np.ndarray  # [N] int64, sums to T
    mel: np.ndarray  # [T, n_mels] log mel
    energy: np.ndarray  # [T]
    f0: np.ndarray  # [T] Hz, 0 where unvoiced
    pitch: np.ndarray  # [T] gap-filled Hz
    pitch_spec: np.ndarray  # [T, 10] raw wavelet components
    pitch_mean: float
    pitch_std: float

    def __post_init__(self):
        T = self.mel.shape[0]
        for name in ("energy", "f0", "pitch", "pitch_spec"):
            if getattr(self, name).shape[0] != T:
                raise DataError(f"{self.id}: {name} has {getattr(self, name).shape[0]} frames, mel has {T}")
        if self.durations.shape != self.phoneme_ids.shape:
            raise DataError(f"{self.id}: durations and phonemes differ in length")
        if int(self.durations.sum()) != T:
            raise DataError(f"{self.id}: durations sum to {int(self.durations.sum())}, expected {T}")

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("phoneme_ids", "durations", "mel", "energy", "f0", "pitch", "pitch_spec")}


# ---------------------------------------------------------------------------
# manifest / symbols


@dataclass
class ManifestRecord:
    id: str
    wav: Path
    phonemes: list[str]
    alignment: Path


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    out, seen = [], set()
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            uid, wav, phon, ali = rec["id"], rec["wav"], rec["phonemes"], rec["alignment"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"{path}:{i}: bad manifest record ({e})") from e
        if uid in seen:
            raise DataError(f"{path}:{i}: duplicate id {uid!r}")
        seen.add(uid)
        phon = phon.split() if isinstance(phon, str) else list(phon)
        out.append(ManifestRecord(str(uid), path.parent / wav, phon, path.parent / ali))
    return out


def read_symbols(path) -> list[str]:
    try:
        syms = [s.strip() for s in Path(path).read_text(encoding="utf-8").splitlines()]
    except OSError as e:
        raise DataError(f"cannot read symbols file {path}: {e}") from e
    syms = [s for s in syms if s and not s.startswith("#")]
    if len(set(syms)) != len(syms):
        raise DataError("symbols file has duplicates")
    if not syms:
        raise DataError("symbols file is empty")
    return syms


def phonemes_to_ids(phonemes, symbols: list[str]) -> np.ndarray:
    index = {s: i for i, s in enumerate(symbols)}
    unknown = [p for p in phonemes if p not in index]
    if unknown:
        raise DataError(f"unknown phoneme(s): {', '.join(sorted(set(unknown)))}")
    return np.array([index[p] for p in phonemes], dtype=np.int64)


# ---------------------------------------------------------------------------
# extraction


def extract_utterance(rec: ManifestRecord, symbols: list[str], cfg: AudioConfig) -> UtteranceFeatures:
    w, _, mel, energy = read_audio_features(rec.wav, cfg)
    contour = preprocess_pitch(estimate_f0(w, cfg))
    spec = cwt_decompose(contour, cfg.frame_period)
    ali = parse_alignment(rec.alignment, vocab=set(symbols))
    if ali.phonemes != rec.phonemes:
        raise DataError(f"{rec.id}: alignment phonemes do not match the manifest")
    T = mel.n_frames
    return UtteranceFeatures(
        id=rec.id,
        phoneme_ids=phonemes_to_ids(rec.phonemes, symbols),
        durations=durations_to_frames(ali, cfg, T).astype(np.int64),
        mel=mel.frames,
        energy=energy,
        f0=contour.f0,
        pitch=contour.interpolated,
        pitch_spec=spec.components,
        pitch_mean=float(contour.utt_mean),
        pitch_std=float(contour.utt_std),
    )


def _extract_one(args):
    rec, symbols, cfg = args
    try:
        return rec.id, extract_utterance(rec, symbols, cfg), None
    except VarianceTTSError as e:
        return rec.id, None, f"{type(e).__name__}: {e}"


def compute_stats(items: list[UtteranceFeatures], cfg: AudioConfig, n_bins: int = 256) -> CorpusStats:
    if not items:
        raise DataError("no utterances")
    pitch = np.concatenate([u.pitch for u in items])
    energy = np.concatenate([u.energy for u in items])
    mel = np.concatenate([u.mel for u in items])
    spec = np.concatenate([u.pitch_spec for u in items])

    def widen(lo, hi):
        return (lo, hi) if hi > lo else (lo, lo + max(abs(lo) * 1e-3, 1e-6))

    plo, phi = widen(float(pitch.min()), float(pitch.max()))
    elo, ehi = widen(float(energy.min()), float(energy.max()))
    return CorpusStats(
        pitch=QuantizerSpec("log_scale_pitch", plo, phi, n_bins),
        energy=QuantizerSpec("uniform_energy", elo, ehi, n_bins),
        mel_mean=mel.mean(axis=0),
        mel_std=np.maximum(mel.std(axis=0), MEL_STD_FLOOR),
        icwt_gains=icwt_gains_for(cfg.frame_period),
        pitch_spec_std=np.maximum(np.sqrt((spec**2).mean(axis=0)), SPEC_STD_FLOOR),
    )


@dataclass
class ExtractResult:
    features: list[UtteranceFeatures]
    failures: list[tuple[str, str]] = field(default_factory=list)
    stats: CorpusStats | None = None


def extract_corpus(manifest, symbols: list[str], cfg: AudioConfig, out_dir=None,
                   workers: int = 1) -> ExtractResult:
    """Extract every utterance, collecting per-item failures instead of aborting.

    Results keep manifest order regardless of ``workers``.
    """
    records = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    if not records:
        raise DataError("no utterances")
    jobs = [(r, symbols, cfg) for r in records]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]
    feats = [f for _, f, _ in results if f is not None]
    failures = [(uid, err) for uid, _, err in results if err is not None]
    for uid, err in failures:
        log.warning("extract failed for %s: %s", uid, err)
    res = ExtractResult(feats, failures)
    if feats:
        res.stats = compute_stats(feats, cfg)
        if out_dir is not None:
            write_cache(out_dir, feats, res.stats, symbols, cfg)
    return res


# ---------------------------------------------------------------------------
# cache


def save_features(path, u: UtteranceFeatures) -> None:
    meta = {"id": u.id, "pitch_mean": u.pitch_mean, "pitch_std": u.pitch_std}
    container.write_container(path, u.arrays(), meta, kind=FEATURE_KIND)


def load_features(path) -> UtteranceFeatures:
    arrays, meta = container.read_container(path, kind=FEATURE_KIND)
    try:
        return UtteranceFeatures(id=meta["id"], pitch_mean=meta["pitch_mean"], pitch_std=meta["pitch_std"], **arrays)
    except (KeyError, TypeError) as e:
        raise DataError(f"{path}: malformed feature file ({e})") from e


def write_cache(out_dir, items, stats: CorpusStats, symbols, cfg: AudioConfig) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    for u in items:
        save_features(out / "features" / f"{u.id}.vtf", u)
    index = {
        "utterances": [u.id for u in items],
        "symbols": list(symbols),
        "audio": {k: getattr(cfg, k) for k in ("sample_rate", "frame_size", "hop_size", "n_mels", "fmin", "fmax")},
        "stats": stats.to_dict(),
    }
    (out / "stats.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class FeatureCache:
    features: list[UtteranceFeatures]
    stats: CorpusStats
    symbols: list[str]
    audio: AudioConfig


def load_cache(cache_dir) -> FeatureCache:
    d = Path(cache_dir)
    try:
        index = json.loads((d / "stats.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"missing or unreadable feature cache in {d}: {e}") from e
    feats = [load_features(d / "features" / f"{uid}.vtf") for uid in index["utterances"]]
    if not feats:
        raise DataError("no utterances")
    return FeatureCache(feats, CorpusStats.from_dict(index["stats"]), index["symbols"], AudioConfig(**index["audio"]))


__all__ = [
    "UtteranceFeatures", "ManifestRecord", "read_manifest", "read_symbols", "phonemes_to_ids",
    "extract_utterance", "compute_stats", "extract_corpus", "save_features", "load_features",
    "write_cache", "load_cache", "FeatureCache", "ExtractResult",
]
