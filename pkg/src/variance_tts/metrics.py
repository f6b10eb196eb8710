"""Objective prosody metrics: pitch moments, DTW pitch distance, energy MAE, corpus reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PitchMoments:
    sigma: float | None  # sample std, n - 1 denominator
    gamma: float | None  # adjusted Fisher-Pearson skewness
    kappa: float | None  # adjusted excess kurtosis
    n: int = 0


def pitch_moments(values, domain: str = "hz") -> PitchMoments:
    """Moments of voiced F0 values. Fields are None when undefined, never a fabricated 0."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if domain == "log":
        x = np.log(x)
    elif domain != "hz":
        raise ValueError(f"domain must be 'hz' or 'log', got {domain!r}")
    n = x.size
    if n < 2:
        return PitchMoments(None, None, None, n)
    d = x - x.mean()
    m2 = float(np.mean(d**2))
    sigma = math.sqrt(float(np.sum(d**2)) / (n - 1))
    if m2 == 0.0 or sigma == 0.0:
        return PitchMoments(0.0, None, None, n)
    gamma = kappa = None
    if n >= 3:
        g1 = float(np.mean(d**3)) / m2**1.5
        gamma = g1 * math.sqrt(n * (n - 1)) / (n - 2)
    if n >= 4:
        g2 = float(np.mean(d**4)) / m2**2 - 3.0
        kappa = ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))
    return PitchMoments(sigma, gamma, kappa, n)


def dtw_distance(a, b) -> float:
    """DTW with |a_i - b_j| cost and steps down/right/diagonal, divided by the path length.

    Among paths of minimal total cost the shortest one is used, so the result is
    a deterministic function of the inputs.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("dtw_distance needs non-empty sequences")
    n, m = a.size, b.size
    cost = np.abs(a[:, None] - b[None, :])
    D = np.full((n + 1, m + 1), np.inf)
    L = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        Dp, Dc, Lp, Lc, c = D[i - 1], D[i], L[i - 1], L[i], cost[i - 1]
        for j in range(1, m + 1):
            best, blen = Dp[j - 1], Lp[j - 1]
            for cand, clen in ((Dp[j], Lp[j]), (Dc[j - 1], Lc[j - 1])):
                if cand < best or (cand == best and clen < blen):
                    best, blen = cand, clen
            Dc[j] = best + c[j - 1]
            Lc[j] = blen + 1
    return float(D[n, m] / L[n, m])


def energy_mae(pred, gt) -> float:
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=np.float64).ravel()
    if p.size != g.size:
        raise DataError(f"energy length mismatch: {p.size} vs {g.size}")
    if p.size == 0:
        raise DataError("energy_mae needs non-empty sequences")
    return float(np.mean(np.abs(p - g)))


def standardize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    s = d.std()
    return d / s if s > 0 else d


# ---------------------------------------------------------------------------
# corpus level


@dataclass
class ProsodySample:
    """What the metrics need from one utterance: F0 (0 = unvoiced) and frame energy."""

    f0: np.ndarray
    energy: np.ndarray


@dataclass
class UtteranceMetrics:
    id: str
    pred: PitchMoments
    ref: PitchMoments
    dtw: float | None
    energy_mae: float


@dataclass
class EvalReport:
    rows: list[UtteranceMetrics]

    def __post_init__(self):
        if not self.rows:
            raise DataError("an evaluation report needs at least one utterance")

    @property
    def count(self) -> int:
        return len(self.rows)

    @staticmethod
    def _mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    def mean_moments(self, side: str) -> PitchMoments:
        ms = [getattr(r, side) for r in self.rows]
        return PitchMoments(self._mean([m.sigma for m in ms]), self._mean([m.gamma for m in ms]),
                            self._mean([m.kappa for m in ms]), sum(m.n for m in ms))

    @property
    def mean_dtw(self):
        return self._mean([r.dtw for r in self.rows])

    @property
    def mean_energy_mae(self) -> float:
        return self._mean([r.energy_mae for r in self.rows])

    HEADER = ("id", "sigma", "gamma", "kappa", "ref_sigma", "ref_gamma", "ref_kappa", "dtw", "energy_mae")

    def _cells(self):
        def row(name, p, r, dtw, emae):
            return [name, p.sigma, p.gamma, p.kappa, r.sigma, r.gamma, r.kappa, dtw, emae]

        out = [row(r.id, r.pred, r.ref, r.dtw, r.energy_mae) for r in self.rows]
        out.append(row("mean", self.mean_moments("pred"), self.mean_moments("ref"), self.mean_dtw,
                       self.mean_energy_mae))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.HEADER)
        for cells in self._cells():
            wr.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in cells])
        return buf.getvalue()

    def to_text(self) -> str:
        def fmt(v):
            return "-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))

        rows = [list(self.HEADER)] + [[fmt(v) for v in cells] for cells in self._cells()]
        widths = [max(len(r[i]) for r in rows) for i in range(len(self.HEADER))]
        lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        lines.append(f"utterances: {self.count}")
        return "\n".join(lines) + "\n"


def evaluate_corpus(pred: dict[str, ProsodySample], ref: dict[str, ProsodySample],
                    energy_range: tuple[float, float], domain: str = "hz") -> EvalReport:
    """Per-utterance metrics in sorted id order, plus unweighted means.

    Moments use voiced raw F0. DTW compares per-utterance standardized voiced
    contours. Energy MAE is taken on energy min-max scaled by ``energy_range``;
    the caller is responsible for pairing ``pred`` energy with ground-truth durations.
    """
    missing_pred = sorted(set(ref) - set(pred))
    missing_ref = sorted(set(pred) - set(ref))
    if missing_pred or missing_ref:
        raise DataError(f"unmatched utterance ids: no prediction for {missing_pred}, no reference for {missing_ref}")
    lo, hi = energy_range
    if not hi > lo:
        raise DataError("energy range needs hi > lo")
    rows = []
    for uid in sorted(ref):
        p, r = pred[uid], ref[uid]
        pv, rv = p.f0[p.f0 > 0], r.f0[r.f0 > 0]
        dtw = dtw_distance(standardize(pv), standardize(rv)) if pv.size and rv.size else None
        emae = energy_mae((np.asarray(p.energy) - lo) / (hi - lo), (np.asarray(r.energy) - lo) / (hi - lo))
        rows.append(UtteranceMetrics(uid, pitch_moments(pv, domain), pitch_moments(rv, domain), dtw, emae))
    return EvalReport(rows)
