"""Deterministic synthetic corpora with ground-truth units and controlled rhythm.

Run lengths follow a rounded, clipped Gaussian: ``max(1, round(x))`` with
``x ~ N(loc + scale*sqrt(rho)*z_u, scale*sqrt(1-rho))``, where ``z_u`` is a
fixed standardized offset per unit id and ``rho`` (``unit_dependence``) is the
share of latent variance tied to unit identity. ``RhythmProfile`` stores the
*observed* pooled mean/SD the corpus should exhibit; ``loc``/``scale`` are
solved numerically so that the rounded, clipped distribution hits them.

Every utterance draws from its own RNG stream keyed by ``(seed, index)``.
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import norm

from duraccent import dataio
from duraccent.dataio import Codebook, FeatureMatrix, UnitSequence
from duraccent.errors import ValidationError

log = logging.getLogger(__name__)

# stream tags mixed into the seed so independent draws never share a stream
_CODEBOOK_STREAM = 1
_OFFSET_STREAM = 2
_UTTERANCE_STREAM = 3


@dataclass(frozen=True)
class RhythmProfile:
    name: str
    duration_mean: float
    duration_sd: float
    unit_dependence: float = 0.9
    distribution: str = "rounded_clipped_gaussian"

    def __post_init__(self):
        if not self.duration_mean >= 1:
            raise ValidationError("duration_mean must be >= 1")
        if not self.duration_sd >= 0:
            raise ValidationError("duration_sd must be non-negative")
        if not 0 <= self.unit_dependence <= 1:
            raise ValidationError("unit_dependence must lie in [0, 1]")
        if self.distribution != "rounded_clipped_gaussian":
            raise ValidationError(f"unsupported distribution {self.distribution!r}")


# observed unit-duration targets (frames) for mora-timed and stress-timed speech
MORA = RhythmProfile("mora", 1.26, 0.58)
STRESS = RhythmProfile("stress", 1.45, 0.97)
PROFILES = {"mora": MORA, "stress": STRESS}


@dataclass(frozen=True)
class SynthConfig:
    k: int = 50
    dim: int = 8
    centroid_scale: float = 10.0
    noise_sd: float = 0.1
    utterance_length_frames: tuple[int, int] = (100, 300)
    num_utterances: int = 100
    unit_transition: str = "uniform_random_distinct"
    seed: int = 0
    frame_shift_ms: float = 20.0

    def __post_init__(self):
        lo, hi = self.utterance_length_frames
        if self.k < 1 or self.dim < 1:
            raise ValidationError("k and dim must be positive")
        if not self.centroid_scale > 0:
            raise ValidationError("centroid_scale must be positive")
        if not self.noise_sd >= 0:
            raise ValidationError("noise_sd must be non-negative")
        if not 1 <= lo <= hi:
            raise ValidationError("utterance_length_frames must satisfy 1 <= min <= max")
        if self.num_utterances < 0:
            raise ValidationError("num_utterances must be non-negative")
        if self.unit_transition != "uniform_random_distinct":
            raise ValidationError(f"unsupported unit_transition {self.unit_transition!r}")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.k > 1 and self.noise_sd >= self.centroid_scale / 2:
            warnings.warn(
                f"noise_sd={self.noise_sd} >= half the centroid separation "
                f"({self.centroid_scale / 2}); units will not be recoverable",
                stacklevel=2,
            )


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))


def gen_codebook(cfg: SynthConfig) -> Codebook:
    rng = _rng(cfg.seed, _CODEBOOK_STREAM)
    c = rng.standard_normal((cfg.k, cfg.dim))
    if cfg.k > 1:
        diff = c[:, None, :] - c[None, :, :]
        d = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
        dmin = d[np.triu_indices(cfg.k, 1)].min()
        # slight overshoot keeps the bound after float rounding
        c = c * (cfg.centroid_scale * (1 + 1e-9) / dmin)
    else:
        c = c * cfg.centroid_scale
    return Codebook(c)


def unit_offsets(k: int, seed: int) -> np.ndarray:
    """Standardized per-unit latent offsets (mean 0, population SD 1)."""
    if k == 1:
        return np.zeros(1)
    z = _rng(seed, _OFFSET_STREAM).standard_normal(k)
    return (z - z.mean()) / z.std()


def _run_length_pmf(loc: np.ndarray, scale: float, dmax: int) -> np.ndarray:
    """P(max(1, round(x)) = d) for d = 1..dmax, one row per latent location."""
    d = np.arange(1, dmax + 1)
    upper = norm.cdf((d[None, :] + 0.5 - loc[:, None]) / scale)
    lower = norm.cdf((d[None, :] - 0.5 - loc[:, None]) / scale)
    lower[:, 0] = 0.0
    upper[:, -1] = 1.0
    return upper - lower


def _support(loc: np.ndarray, sd: float) -> int:
    return max(2, int(math.ceil(float(np.max(loc)) + 12 * sd)) + 2)


def rounded_stats(loc: float, scale: float, rho: float, offsets: np.ndarray) -> tuple[float, float]:
    """Exact pooled mean/SD of run lengths when units are visited uniformly."""
    locs = loc + scale * math.sqrt(rho) * offsets
    within = scale * math.sqrt(1 - rho)
    dmax = _support(locs, scale)
    d = np.arange(1, dmax + 1)
    if within == 0:
        dd = np.clip(np.floor(locs + 0.5), 1, None)
        return float(dd.mean()), float(dd.std())
    p = _run_length_pmf(locs, within, dmax).mean(axis=0)
    mean = float(p @ d)
    return mean, float(math.sqrt(max(p @ (d * d) - mean * mean, 0.0)))


@functools.lru_cache(maxsize=64)
def _calibrate(mean: float, sd: float, rho: float, offsets: tuple[float, ...]) -> tuple[float, float]:
    if sd == 0:
        return mean, 0.0
    z = np.array(offsets)

    def resid(p):
        m, s = rounded_stats(p[0], math.exp(p[1]), rho, z)
        return [m - mean, s - sd]

    best = None
    for start in ([mean, math.log(sd)], [mean - 1.0, math.log(2 * sd)], [0.0, 0.0]):
        r = least_squares(resid, start, xtol=1e-14, ftol=1e-14, gtol=1e-14)
        if best is None or r.cost < best.cost:
            best = r
        if r.cost < 1e-16:
            break
    if best.cost > 1e-10:
        warnings.warn(
            f"could not calibrate run lengths to mean={mean}, sd={sd}; "
            "using the uncalibrated Gaussian",
            stacklevel=3,
        )
        return mean, sd
    return float(best.x[0]), float(math.exp(best.x[1]))


def latent_params(profile: RhythmProfile, offsets: np.ndarray) -> tuple[float, float]:
    """(loc, scale) of the latent Gaussian reproducing the profile's observed stats."""
    return _calibrate(profile.duration_mean, profile.duration_sd, profile.unit_dependence,
                      tuple(np.round(offsets, 15).tolist()))


def gen_utterance(cb: Codebook, profile: RhythmProfile, cfg: SynthConfig,
                  index: int = 0) -> tuple[FeatureMatrix, UnitSequence]:
    """One utterance: (noisy centroid features, ground-truth frame-wise units)."""
    offsets = unit_offsets(cb.k, cfg.seed)
    loc, scale = latent_params(profile, offsets)
    rho = profile.unit_dependence
    between, within = scale * math.sqrt(rho), scale * math.sqrt(1 - rho)

    rng = _rng(cfg.seed, _UTTERANCE_STREAM, index)
    lo, hi = cfg.utterance_length_frames
    target = int(rng.integers(lo, hi + 1))
    units, durs, total = [], [], 0
    prev = -1
    while total < target:
        if cb.k == 1:
            u = 0
        elif prev < 0:
            u = int(rng.integers(cb.k))
        else:
            u = int(rng.integers(cb.k - 1))
            u += u >= prev
        x = loc + between * offsets[u] + within * rng.standard_normal()
        d = max(1, int(math.floor(x + 0.5)))
        d = min(d, target - total)
        if cb.k == 1 and units:
            durs[-1] += d
        else:
            units.append(u)
            durs.append(d)
        total += d
        prev = u
    frame_units = np.repeat(np.array(units, dtype=np.int64), durs)
    feats = cb.centroids[frame_units]
    if cfg.noise_sd > 0:
        feats = feats + rng.normal(0.0, cfg.noise_sd, size=feats.shape)
    return (
        FeatureMatrix(feats.astype(np.float32), cfg.frame_shift_ms),
        UnitSequence(frame_units, cb.k),
    )


def gen_corpus(cb: Codebook, profile: RhythmProfile, cfg: SynthConfig, out_dir) -> Path:
    """Write FMAT + unit files, list files and a pair manifest; return the manifest path.

    Layout of ``out_dir``: ``utt_NNNNN.fmat``, ``utt_NNNNN.units``,
    ``manifest.tsv`` (``fmat<TAB>units`` per line), ``features.list``,
    ``units.list`` and the generating ``codebook.kmcb``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        dataio.write_model(out / "codebook.kmcb", cb)
        written.append(out / "codebook.kmcb")
        rows = []
        for i in range(cfg.num_utterances):
            feats, units = gen_utterance(cb, profile, cfg, i)
            stem = f"utt_{i:05d}"
            dataio.write_features(out / f"{stem}.fmat", feats)
            written.append(out / f"{stem}.fmat")
            dataio.write_units(out / f"{stem}.units", units)
            written.append(out / f"{stem}.units")
            rows.append((f"{stem}.fmat", f"{stem}.units"))
        for name, text in (
            ("manifest.tsv", "".join(f"{a}\t{b}\n" for a, b in rows)),
            ("features.list", "".join(f"{a}\n" for a, _ in rows)),
            ("units.list", "".join(f"{b}\n" for _, b in rows)),
        ):
            with open(out / name, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
            written.append(out / name)
    except OSError:
        removed = 0
        for p in written:
            try:
                p.unlink()
                removed += 1
            except OSError:
                pass
        log.error("corpus generation failed; removed %d of %d partial files", removed, len(written))
        raise
    return out / "manifest.tsv"
