"""Synthetic harmonic "speech" with exactly known alignments.

Each phoneme is a harmonic source shaped by two formant bumps at its own
amplitude; ``sil`` is digital silence. Pitch follows a smooth per-utterance
contour. Good enough to exercise extraction, training and synthesis end to
end without a real corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import PhonemeAlignment, write_alignment
from .dsp import AudioConfig, Waveform, write_wav

SILENCE = "sil"

# symbol: (formant1 Hz, formant2 Hz, amplitude, base duration in frames)
PHONES = {
    "AA": (730.0, 1090.0, 0.50, 6),
    "IY": (270.0, 2290.0, 0.35, 5),
    "UW": (300.0, 870.0, 0.40, 7),
    "EH": (530.0, 1840.0, 0.45, 4),
    "OW": (570.0, 840.0, 0.55, 6),
    "M": (250.0, 1200.0, 0.20, 3),
    "N": (280.0, 1700.0, 0.22, 3),
    "L": (360.0, 1300.0, 0.30, 4),
}
SYMBOLS = [SILENCE] + list(PHONES)


@dataclass
class SyntheticUtterance:
    id: str
    waveform: Waveform
    alignment: PhonemeAlignment
    durations: np.ndarray
    f0: np.ndarray  # frame-level Hz used for synthesis (0 in silence)


def _frame_contour(rng, T):
    base = rng.uniform(110.0, 180.0)
    t = np.arange(T)
    slope = rng.uniform(-0.25, 0.05) / max(T, 1)
    mod = 0.08 * np.sin(2 * np.pi * t / rng.uniform(18, 40) + rng.uniform(0, 2 * np.pi))
    return base * (1.0 + slope * t + mod)


def make_utterance(uid: str, rng: np.random.Generator, cfg: AudioConfig,
                   n_phones: tuple[int, int] = (5, 8)) -> SyntheticUtterance:
    k = int(rng.integers(n_phones[0], n_phones[1] + 1))
    names = list(PHONES)
    seq = [SILENCE] + [names[i] for i in rng.integers(0, len(names), k)] + [SILENCE]
    durs = []
    for ph in seq:
        if ph == SILENCE:
            durs.append(int(rng.integers(3, 6)))
        else:
            durs.append(max(2, PHONES[ph][3] + int(rng.integers(-1, 2))))
    durs = np.array(durs, dtype=np.int64)
    T = int(durs.sum())
    hop, sr = cfg.hop_size, cfg.sample_rate
    n = T * hop - 1

    frame_of_sample = np.minimum(np.floor(np.arange(n) / hop + 0.5).astype(int), T - 1)
    phone_of_frame = np.repeat(np.arange(len(seq)), durs)
    phone_of_sample = phone_of_frame[frame_of_sample]

    f0_frames = _frame_contour(rng, T)
    f0_samples = np.interp(np.arange(n) / hop, np.arange(T), f0_frames)
    phase = 2 * np.pi * np.cumsum(f0_samples) / sr

    amp = np.array([0.0 if ph == SILENCE else PHONES[ph][2] for ph in seq])
    env = amp[phone_of_sample]
    # 5 ms ramps keep segment joins click-free
    ramp = max(1, int(0.005 * sr))
    env = np.convolve(np.pad(env, ramp, mode="edge"), np.ones(2 * ramp + 1) / (2 * ramp + 1), "valid")

    signal = np.zeros(n)
    max_h = int(cfg.fmax * 0.6 / f0_frames.min())
    for h in range(1, max_h + 1):
        gains = np.zeros(len(seq))
        for j, ph in enumerate(seq):
            if ph == SILENCE:
                continue
            f1, f2, _, _ = PHONES[ph]
            fh = h * f0_frames[phone_of_frame == j].mean()
            gains[j] = np.exp(-0.5 * ((fh - f1) / 120.0) ** 2) + 0.6 * np.exp(-0.5 * ((fh - f2) / 180.0) ** 2) + 0.02
        signal += gains[phone_of_sample] * np.sin(h * phase)
    peak = np.max(np.abs(signal)) or 1.0
    samples = env * signal / peak
    silent = np.array([ph == SILENCE for ph in seq])[phone_of_sample] & (env < 1e-4)
    samples[silent] = 0.0

    period = cfg.frame_period
    bounds = np.concatenate([[0], np.cumsum(durs)])
    entries = [(ph, float(bounds[i] * period), float(bounds[i + 1] * period)) for i, ph in enumerate(seq)]
    f0_true = np.where(amp[phone_of_frame] > 0, f0_frames, 0.0)
    return SyntheticUtterance(uid, Waveform(samples, sr), PhonemeAlignment(entries), durs, f0_true)


def make_corpus(out_dir, n_utts: int = 10, seed: int = 0, cfg: AudioConfig | None = None) -> Path:
    """Write wavs, alignments, ``symbols.txt`` and ``manifest.jsonl``; return the manifest path."""
    cfg = cfg or AudioConfig()
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "align").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n_utts):
        utt = make_utterance(f"utt{i:03d}", rng, cfg)
        write_wav(out / "wav" / f"{utt.id}.wav", utt.waveform)
        write_alignment(utt.alignment, out / "align" / f"{utt.id}.tsv")
        lines.append(json.dumps({
            "id": utt.id,
            "wav": f"wav/{utt.id}.wav",
            "phonemes": " ".join(utt.alignment.phonemes),
            "alignment": f"align/{utt.id}.tsv",
        }))
    (out / "symbols.txt").write_text("\n".join(SYMBOLS) + "\n", encoding="utf-8")
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
