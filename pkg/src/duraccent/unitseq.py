"""Run-length factorization of unit sequences and unit-duration statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from duraccent.dataio import RunLengthSequence, UnitSequence
from duraccent.errors import ValidationError


@dataclass(frozen=True)
class DurationStats:
    mean: float
    sd: float
    count: int

    def to_tsv(self) -> str:
        return f"mean\tsd\tcount\n{self.mean:.10g}\t{self.sd:.10g}\t{self.count}\n"


def run_length_encode(s: UnitSequence) -> RunLengthSequence:
    u = s.units
    starts = np.flatnonzero(np.r_[True, u[1:] != u[:-1]])
    durations = np.diff(np.r_[starts, u.size])
    return RunLengthSequence(u[starts], durations, s.codebook_size)


def run_length_decode(r: RunLengthSequence) -> UnitSequence:
    # RunLengthSequence already enforces positive durations and distinct neighbours
    return UnitSequence(np.repeat(r.units, r.durations), r.codebook_size)


def deduplicate(s: UnitSequence) -> UnitSequence:
    u = s.units
    keep = np.r_[True, u[1:] != u[:-1]]
    return UnitSequence(u[keep], s.codebook_size)


def run_durations(corpus: Sequence[UnitSequence]) -> np.ndarray:
    """All run lengths of the corpus, pooled; runs never span utterances."""
    if not corpus:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([run_length_encode(s).durations for s in corpus])


def duration_stats(corpus: Sequence[UnitSequence]) -> DurationStats:
    """Pooled mean and population SD (divisor N) of run lengths."""
    if len(corpus) == 0:
        raise ValidationError("duration_stats needs a non-empty corpus")
    return stats_of_durations(run_durations(corpus))


def stats_of_durations(durations) -> DurationStats:
    d = np.asarray(durations, dtype=np.float64)
    if d.size == 0:
        raise ValidationError("no durations to summarize")
    if np.any(d < 1):
        raise ValidationError("durations must be >= 1")
    mean = float(d.mean())
    return DurationStats(mean=mean, sd=float(np.sqrt(np.mean((d - mean) ** 2))), count=int(d.size))
