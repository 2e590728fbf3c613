"""k-means codebook training (Lloyd + k-means++) and frame encoding.

Distances are always computed as explicit squared differences, in fixed-size
row chunks, so assignments are exact up to float64 rounding and independent of
any BLAS reduction order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from duraccent.dataio import Codebook, FeatureMatrix, UnitSequence
from duraccent.errors import InsufficientDataError, ValidationError

log = logging.getLogger(__name__)

PRESET_SIZES = (50, 200, 1000)

# rows per distance chunk is chosen so chunk * K * D stays near this many floats
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iterations: int = 100
    rel_tolerance: float = 1e-6
    seed: int = 0
    init: str = "kmeanspp"
    # candidates per k-means++ step; 0 picks 2 + floor(ln k), 1 is plain k-means++
    local_trials: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be positive, got {self.k}")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be positive")
        if not self.rel_tolerance >= 0:
            raise ValidationError("rel_tolerance must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.init not in ("kmeanspp", "random"):
            raise ValidationError(f"unknown init {self.init!r}")
        if self.local_trials < 0:
            raise ValidationError("local_trials must be non-negative")

    @property
    def trials(self) -> int:
        return self.local_trials or 2 + int(math.log(self.k))


def _stack(corpus: Sequence[FeatureMatrix]) -> np.ndarray:
    if not corpus:
        raise InsufficientDataError("empty training corpus")
    dims = {m.dim for m in corpus}
    if len(dims) != 1:
        raise ValidationError(f"feature dimension mismatch across corpus: {sorted(dims)}")
    return np.concatenate([m.frames for m in corpus]).astype(np.float64)


def _nearest(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid index (lowest index on ties) and squared distance per row."""
    n, d = x.shape
    k = c.shape[0]
    step = max(1, _CHUNK_ELEMS // max(1, k * d))
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for lo in range(0, n, step):
        diff = x[lo : lo + step, None, :] - c[None, :, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        idx = np.argmin(sq, axis=1)
        labels[lo : lo + step] = idx
        dist[lo : lo + step] = sq[np.arange(idx.size), idx]
    return labels, dist


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator, trials: int = 1) -> np.ndarray:
    """Greedy k-means++: draw ``trials`` D^2-weighted candidates, keep the best."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        cum = np.cumsum(d2)
        if cum[-1] <= 0:
            break
        cand = np.minimum(np.searchsorted(cum, rng.random(trials) * cum[-1], side="right"), n - 1)
        best, best_d2, best_pot = -1, None, np.inf
        for c in cand:
            nd = np.minimum(d2, np.sum((x - x[c]) ** 2, axis=1))
            pot = nd.sum()
            if pot < best_pot:
                best, best_d2, best_pot = int(c), nd, pot
        chosen.append(best)
        d2 = best_d2
    return x[chosen].copy()


def _init_centroids(x: np.ndarray, cfg: KMeansConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.init == "random":
        uniq = np.unique(x, axis=0)
        return uniq[rng.choice(uniq.shape[0], size=cfg.k, replace=False)]
    return _kmeanspp(x, cfg.k, rng, cfg.trials)


def _update(x: np.ndarray, labels: np.ndarray, dist: np.ndarray, old: np.ndarray) -> np.ndarray:
    k, d = old.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, d))
    np.add.at(sums, labels, x)
    new = old.copy()
    filled = counts > 0
    new[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if empty.size:
        # re-seed each empty cluster at the frame currently worst served
        d = dist.copy()
        for j in empty:
            far = int(np.argmax(d))
            new[j] = x[far]
            d[far] = -1.0
        log.debug("re-seeded %d empty cluster(s)", empty.size)
    return new


def train_codebook(corpus: Sequence[FeatureMatrix], cfg: KMeansConfig) -> Codebook:
    """Full-batch Lloyd iterations from k-means++ (or random) seeding.

    The returned codebook carries the per-iteration inertia in
    ``inertia_trace``; its last entry equals ``training_inertia``.
    """
    x = _stack(corpus)
    if x.shape[0] < cfg.k:
        raise InsufficientDataError(f"{x.shape[0]} frames cannot support k={cfg.k}")
    if cfg.k > 1 and np.unique(x, axis=0).shape[0] < cfg.k:
        raise InsufficientDataError(f"fewer than k={cfg.k} distinct frames")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    centroids = _init_centroids(x, cfg, rng)
    if centroids.shape[0] < cfg.k:
        # k-means++ ran out of positive-distance candidates; fill from unused distinct frames
        uniq = np.unique(x, axis=0)
        have = {row.tobytes() for row in centroids}
        extra = [row for row in uniq if row.tobytes() not in have]
        centroids = np.vstack([centroids, extra[: cfg.k - centroids.shape[0]]])

    trace: list[float] = []
    for it in range(cfg.max_iterations):
        labels, dist = _nearest(x, centroids)
        cur = float(dist.sum())
        trace.append(cur)
        if it > 0:
            prev = trace[-2]
            if cur > prev * (1 + 1e-12) + 1e-300:
                raise AssertionError(f"inertia increased at iteration {it}: {prev} -> {cur}")
            if cur == 0.0 or (prev - cur) / prev < cfg.rel_tolerance:
                break
        elif cur == 0.0:
            break
        if it + 1 == cfg.max_iterations:
            break
        centroids = _update(x, labels, dist, centroids)

    log.info("k-means k=%d finished after %d iterations, inertia %.6g", cfg.k, len(trace), trace[-1])
    return Codebook(centroids, trace[-1], tuple(trace))


def _check_dim(m: FeatureMatrix, cb: Codebook):
    if m.dim != cb.dim:
        raise ValidationError(f"feature dim {m.dim} != codebook dim {cb.dim}")


def encode_frames(m: FeatureMatrix, cb: Codebook) -> UnitSequence:
    _check_dim(m, cb)
    labels, _ = _nearest(m.frames.astype(np.float64), cb.centroids)
    return UnitSequence(labels, cb.k)


def inertia(corpus: Sequence[FeatureMatrix], cb: Codebook) -> float:
    total = 0.0
    for m in corpus:
        _check_dim(m, cb)
        _, dist = _nearest(m.frames.astype(np.float64), cb.centroids)
        total += float(dist.sum())
    return total
