"""Success/fail recall analysis over the target-language probability signal.

Sweeping a threshold tau over [0, 1] splits evaluated utterances into
"successfully attacked" (p > tau) and "failed" (p < tau) sets; BLEU is
recomputed corpus-level inside each recalled subset. A strongly bi-modal
probability distribution shows up as a single large discontinuity in the
success curve's recalled fraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .metrics import EvalRecord, corpus_bleu

N_TAU_GRID = 101


def default_tau_grid() -> np.ndarray:
    return np.arange(N_TAU_GRID) / (N_TAU_GRID - 1)


@dataclass(frozen=True)
class CurvePoint:
    tau: float
    recalled_fraction: float
    bleu: Optional[float]      # absent (None) when the recalled set is empty


@dataclass(frozen=True)
class RecallCurve:
    kind: str                  # "success" or "fail"
    points: tuple[CurvePoint, ...]

    def __post_init__(self):
        if self.kind not in ("success", "fail"):
            raise ValueError(f"kind must be success or fail, got {self.kind!r}")
        taus = [p.tau for p in self.points]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("taus must be strictly increasing")
        fracs = [p.recalled_fraction for p in self.points]
        pairs = zip(fracs, fracs[1:])
        if self.kind == "success":
            ok = all(b <= a + 1e-12 for a, b in pairs)
        else:
            ok = all(b >= a - 1e-12 for a, b in pairs)
        if not ok:
            raise ValueError(f"recalled_fraction not monotone for kind={self.kind}")


def _curve(records: Sequence[EvalRecord], taus, kind: str) -> RecallCurve:
    points = []
    for tau in taus:
        if kind == "success":
            recalled = [r for r in records if r.p_target > tau]
        else:
            recalled = [r for r in records if r.p_target < tau]
        frac = len(recalled) / len(records)
        bleu = (
            corpus_bleu([r.reference for r in recalled], [r.hypothesis for r in recalled])
            if recalled
            else None
        )
        points.append(CurvePoint(float(tau), frac, bleu))
    return RecallCurve(kind, tuple(points))


def recall_curves(
    records: Sequence[EvalRecord], taus: Optional[Sequence[float]] = None
) -> tuple[RecallCurve, RecallCurve]:
    """Success and fail BLEU-recall curves over the tau grid.

    Strict inequalities on both sides: a record with p exactly equal to tau
    belongs to neither set at that threshold.
    """
    if not records:
        raise ValueError("records must be non-empty")
    if taus is None:
        taus = default_tau_grid()
    taus = [float(t) for t in taus]
    if any(not 0.0 <= t <= 1.0 for t in taus):
        raise ValueError("taus must lie within [0, 1]")
    return _curve(records, taus, "success"), _curve(records, taus, "fail")


@dataclass(frozen=True)
class BimodalitySummary:
    """Mass split of the p_target distribution plus a 10-bin histogram."""

    mass_low: float            # p <= 0.1
    mass_mid: float            # 0.1 < p < 0.9
    mass_high: float           # p >= 0.9
    histogram: tuple[int, ...]
    bin_edges: tuple[float, ...]
    n_records: int

    def __post_init__(self):
        if abs(self.mass_low + self.mass_mid + self.mass_high - 1.0) > 1e-9:
            raise ValueError("masses must sum to 1")


def bimodality_summary(records: Sequence[EvalRecord]) -> BimodalitySummary:
    if not records:
        raise ValueError("records must be non-empty")
    ps = np.array([r.p_target for r in records])
    n = len(ps)
    low = int(np.sum(ps <= 0.1))
    high = int(np.sum(ps >= 0.9))
    counts, edges = np.histogram(ps, bins=10, range=(0.0, 1.0))
    return BimodalitySummary(
        mass_low=low / n,
        mass_mid=(n - low - high) / n,
        mass_high=high / n,
        histogram=tuple(int(c) for c in counts),
        bin_edges=tuple(float(e) for e in edges),
        n_records=n,
    )


@dataclass(frozen=True)
class DropLocation:
    """Largest single step-to-step drop in a success curve's recall."""

    tau_before: float
    tau_after: float
    recall_before: float
    recall_after: float

    @property
    def size(self) -> float:
        return self.recall_before - self.recall_after


def largest_recall_drop(curve: RecallCurve) -> DropLocation:
    """Locate the discontinuity: the biggest drop in recalled fraction
    between consecutive grid points (ties resolved to the first)."""
    if len(curve.points) < 2:
        raise ValueError("curve needs at least two points")
    best = None
    for a, b in zip(curve.points, curve.points[1:]):
        drop = a.recalled_fraction - b.recalled_fraction
        if best is None or drop > best.size:
            best = DropLocation(a.tau, b.tau, a.recalled_fraction, b.recalled_fraction)
    return best
