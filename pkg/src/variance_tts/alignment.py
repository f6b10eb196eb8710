"""Phoneme alignments: TSV ingestion, frame durations and boundary error.

File format: UTF-8, one ``phoneme<TAB>start<TAB>end`` entry per line (times in
seconds), blank lines and ``#`` comments ignored. A Praat TextGrid phone tier
converts with a one-liner, e.g. using the ``textgrid`` package::

    for iv in tg.getFirst("phones"): print(iv.mark, f"{iv.minTime:.6f}", f"{iv.maxTime:.6f}", sep="\\t")
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dsp import AudioConfig
from .errors import DataError, ParseError

CONTIGUITY_TOL = 1e-4


@dataclass
class PhonemeAlignment:
    entries: list[tuple[str, float, float]] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def phonemes(self) -> list[str]:
        return [e[0] for e in self.entries]

    def boundaries(self) -> np.ndarray:
        """Internal boundaries: the end of every entry but the last."""
        return np.array([e[2] for e in self.entries[:-1]], dtype=np.float64)

    def validate(self) -> "PhonemeAlignment":
        for i, (ph, start, end) in enumerate(self.entries):
            if not end > start:
                raise ParseError(f"entry {ph!r} has end {end} <= start {start}", line=i + 1)
            if i and abs(start - self.entries[i - 1][2]) > CONTIGUITY_TOL:
                kind = "overlaps" if start < self.entries[i - 1][2] else "leaves a gap after"
                raise ParseError(f"entry {ph!r} {kind} the previous entry", line=i + 1)
        return self


def parse_alignment(path, vocab: Iterable[str] | None = None) -> PhonemeAlignment:
    """Read and validate an alignment TSV; errors carry the offending line number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read alignment ({exc})") from exc
    return parse_alignment_text(text, vocab, path=path)


def parse_alignment_text(text: str, vocab=None, path=None) -> PhonemeAlignment:
    vocab = set(vocab) if vocab is not None else None
    entries = []
    prev_end = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("expected 3 tab-separated fields", lineno, path)
        ph = parts[0].strip()
        try:
            start, end = float(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError("times must be numbers", lineno, path) from None
        if not (math.isfinite(start) and math.isfinite(end)) or start < 0:
            raise ParseError("times must be finite and non-negative", lineno, path)
        if vocab is not None and ph not in vocab:
            raise ParseError(f"unknown phoneme {ph!r}", lineno, path)
        if end <= start:
            raise ParseError(f"non-monotonic times ({start} .. {end})", lineno, path)
        if prev_end is not None:
            if start < prev_end - CONTIGUITY_TOL:
                raise ParseError(f"interval overlaps previous (starts {start} < {prev_end})", lineno, path)
            if start > prev_end + CONTIGUITY_TOL:
                raise ParseError(f"gap before interval ({prev_end} .. {start})", lineno, path)
        entries.append((ph, start, end))
        prev_end = end
    if not entries:
        raise ParseError("alignment has no entries", path=path)
    return PhonemeAlignment(entries)


def format_alignment(a: PhonemeAlignment) -> str:
    return "".join(f"{ph}\t{start:.6f}\t{end:.6f}\n" for ph, start, end in a.entries)


def write_alignment(a: PhonemeAlignment, path) -> None:
    Path(path).write_text(format_alignment(a), encoding="utf-8")


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def durations_to_frames(a: PhonemeAlignment, cfg: AudioConfig, T: int) -> np.ndarray:
    """Frames per phoneme, reconciled so the durations sum to exactly ``T``.

    The residual goes to the final phoneme; if that would make it negative the
    remainder is taken from earlier phonemes, last first.
    """
    n = len(a.entries)
    if T < n:
        raise DataError(f"{T} frames cannot hold {n} phonemes")
    period = cfg.frame_period
    starts = _round_half_up([e[1] / period for e in a.entries])
    ends = _round_half_up([e[2] / period for e in a.entries])
    d = np.maximum(ends - starts, 0)
    residual = int(T - d.sum())
    i = n - 1
    d[i] += residual
    while d[i] < 0 and i > 0:
        d[i - 1] += d[i]
        d[i] = 0
        i -= 1
    if d.sum() != T or np.any(d < 0):
        raise DataError("cannot reconcile durations with the frame count")
    return d


def boundary_diff(a: PhonemeAlignment, b: PhonemeAlignment) -> float:
    """Mean absolute difference of internal phoneme boundaries, in seconds."""
    if len(a) != len(b):
        raise DataError(f"phoneme counts differ: {len(a)} vs {len(b)}")
    ba, bb = a.boundaries(), b.boundaries()
    if ba.size == 0:
        return 0.0
    return float(np.mean(np.abs(ba - bb)))
