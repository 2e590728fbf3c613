"""Prosody evaluation: DTW alignment, Pearson correlations, vowel duration ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from duraccent.dataio import FeatureMatrix, PhonemeAlignment, ProsodyTrack
from duraccent.errors import (
    DegenerateInputError,
    InsufficientDataError,
    LabelMismatchError,
    ValidationError,
)

DISTANCES = ("cosine", "euclidean", "symmetric_kl")
KL_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# DTW
# ---------------------------------------------------------------------------


def frame_distances(a: np.ndarray, b: np.ndarray, distance: str = "cosine") -> np.ndarray:
    """Pairwise local cost matrix of shape (len(a), len(b))."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if distance == "euclidean":
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    if distance == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na[:, None] * nb[None, :]
        dot = a @ b.T
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(denom > 0, dot / denom, 0.0)
        sim = np.clip(sim, -1.0, 1.0)
        # two zero vectors are identical; one zero vector is orthogonal to anything
        both_zero = (na[:, None] == 0) & (nb[None, :] == 0)
        d = 1.0 - sim
        d[both_zero] = 0.0
        return d
    if distance == "symmetric_kl":
        if np.any(a < 0) or np.any(b < 0):
            raise ValidationError("symmetric_kl needs non-negative (posterior) frames")
        p = np.maximum(a, KL_FLOOR)
        q = np.maximum(b, KL_FLOOR)
        lp, lq = np.log(p), np.log(q)
        # KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)
        cross = p @ lq.T
        self_p = np.sum(p * lp, axis=1)
        self_q = np.sum(q * lq, axis=1)
        d = self_p[:, None] - cross - (q @ lp.T).T + self_q[None, :]
        return np.maximum(d, 0.0)
    raise ValidationError(f"unknown distance {distance!r}; expected one of {DISTANCES}")


def _as_frames(x) -> np.ndarray:
    if isinstance(x, FeatureMatrix):
        return x.frames
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def dtw_align(a, b, distance: str = "cosine") -> tuple[list[tuple[int, int]], float]:
    """Minimal-cost monotone alignment with unit steps (1,1), (1,0), (0,1).

    On equal accumulated cost the diagonal predecessor wins, then (1,0), then
    (0,1). Returns the path from (0, 0) to (T1-1, T2-1) and its total cost.
    """
    fa, fb = _as_frames(a), _as_frames(b)
    if fa.shape[1] != fb.shape[1]:
        raise ValidationError(f"feature dims differ: {fa.shape[1]} vs {fb.shape[1]}")
    if fa.shape[0] < 1 or fb.shape[0] < 1:
        raise ValidationError("cannot align an empty sequence")
    local = frame_distances(fa, fb, distance)
    n, m = local.shape
    acc = np.full((n, m), np.inf)
    back = np.zeros((n, m), dtype=np.int8)  # 0 diag, 1 from (i-1, j), 2 from (i, j-1)
    acc[0, 0] = local[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + local[0, j]
        back[0, j] = 2
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + local[i, 0]
        back[i, 0] = 1
        prev = acc[i - 1]
        row = acc[i]
        li = local[i]
        for j in range(1, m):
            best, arg = prev[j - 1], 0
            if prev[j] < best:
                best, arg = prev[j], 1
            if row[j - 1] < best:
                best, arg = row[j - 1], 2
            row[j] = best + li[j]
            back[i, j] = arg
    i, j = n - 1, m - 1
    path = [(i, j)]
    while (i, j) != (0, 0):
        step = back[i, j]
        if step == 0:
            i, j = i - 1, j - 1
        elif step == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    path.reverse()
    return path, float(acc[n - 1, m - 1])


def check_path(path: Sequence[tuple[int, int]], n: int, m: int) -> None:
    """Raise AssertionError unless ``path`` is a valid monotone alignment path."""
    assert path[0] == (0, 0), path[0]
    assert path[-1] == (n - 1, m - 1), path[-1]
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        di, dj = i1 - i0, j1 - j0
        assert di in (0, 1) and dj in (0, 1) and (di or dj), ((i0, j0), (i1, j1))


# ---------------------------------------------------------------------------
# Correlations
# ---------------------------------------------------------------------------


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("pearson needs two equal-length 1-D sequences")
    if x.size < 2:
        raise InsufficientDataError("pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("pearson undefined for a constant sequence")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class VoicedPairs:
    test_pitch: np.ndarray
    ref_pitch: np.ndarray
    test_intensity: np.ndarray
    ref_intensity: np.ndarray

    def __len__(self):
        return self.test_pitch.size


def voiced_pairs(test: tuple[FeatureMatrix, ProsodyTrack], ref: tuple[FeatureMatrix, ProsodyTrack],
                 distance: str = "cosine") -> VoicedPairs:
    """DTW-align two utterances and keep path steps where both frames are voiced."""
    (tf, tp), (rf, rp) = test, ref
    for f, p, who in ((tf, tp, "test"), (rf, rp, "reference")):
        if f.num_frames != p.num_frames:
            raise ValidationError(
                f"{who} features have {f.num_frames} frames but prosody has {p.num_frames}"
            )
    path, _ = dtw_align(tf, rf, distance)
    ii = np.array([i for i, _ in path])
    jj = np.array([j for _, j in path])
    both = tp.voiced[ii] & rp.voiced[jj]
    ii, jj = ii[both], jj[both]
    return VoicedPairs(tp.pitch_hz[ii], rp.pitch_hz[jj], tp.intensity_db[ii], rp.intensity_db[jj])


@dataclass(frozen=True)
class ProsodyCorrelation:
    pitch_corr: float
    intensity_corr: float
    n_references: int
    n_skipped: int


def _pair_corrs(pairs: VoicedPairs) -> tuple[float, float]:
    return (
        pearson(pairs.test_pitch, pairs.ref_pitch),
        pearson(pairs.test_intensity, pairs.ref_intensity),
    )


def prosody_correlation(test, refs, distance: str = "cosine") -> ProsodyCorrelation:
    """Pitch and intensity correlation against each reference, averaged.

    A reference whose voiced pair set is too small or constant in either
    feature is skipped and counted in ``n_skipped``.
    """
    if len(refs) == 0:
        raise ValidationError("prosody_correlation needs at least one reference")
    pitch, inten, skipped = [], [], 0
    for ref in refs:
        try:
            p, i = _pair_corrs(voiced_pairs(test, ref, distance))
        except (DegenerateInputError, InsufficientDataError):
            skipped += 1
            continue
        pitch.append(p)
        inten.append(i)
    if not pitch:
        raise DegenerateInputError(f"all {len(refs)} reference(s) gave degenerate voiced pairs")
    return ProsodyCorrelation(float(np.mean(pitch)), float(np.mean(inten)), len(pitch), skipped)


def phoneme_durations(a: PhonemeAlignment) -> tuple[list[str], np.ndarray]:
    spans = a.without_silence()
    return [s.label for s in spans], np.array([s.num_frames for s in spans], dtype=np.float64)


def duration_correlation(test: PhonemeAlignment, ref: PhonemeAlignment) -> float:
    tl, td = phoneme_durations(test)
    rl, rd = phoneme_durations(ref)
    if tl != rl:
        raise LabelMismatchError(f"phoneme labels differ ({len(tl)} vs {len(rl)} non-silence spans)")
    if len(tl) < 2:
        raise InsufficientDataError("duration correlation needs at least 2 phonemes")
    return pearson(td, rd)


@dataclass(frozen=True)
class VowelRatio:
    stressed_ms: float
    unstressed_ms: float
    ratio: float
    n_stressed: int
    n_unstressed: int


def vowel_duration_ratio(alignments: Sequence[PhonemeAlignment], frame_shift_ms: float) -> VowelRatio:
    if not frame_shift_ms > 0:
        raise ValidationError("frame_shift_ms must be positive")
    stressed, unstressed = [], []
    for a in alignments:
        for s in a.spans:
            if s.is_silence or not s.is_vowel:
                continue
            if s.stress == "stressed":
                stressed.append(s.num_frames)
            elif s.stress == "unstressed":
                unstressed.append(s.num_frames)
    if not stressed or not unstressed:
        raise InsufficientDataError(
            f"need both stressed and unstressed vowels (got {len(stressed)} / {len(unstressed)})"
        )
    s_ms = math.fsum(stressed) / len(stressed) * frame_shift_ms
    u_ms = math.fsum(unstressed) / len(unstressed) * frame_shift_ms
    return VowelRatio(s_ms, u_ms, s_ms / u_ms, len(stressed), len(unstressed))
