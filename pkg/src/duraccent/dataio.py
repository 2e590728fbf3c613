"""Artifact types and their on-disk formats.

Binary artifacts share a common header: a 4-byte ASCII magic tag followed by a
little-endian uint32 version. Everything after the header is fixed-width and
little-endian.

FMAT v1 (feature matrix)::

    magic "FMAT" | u32 version | u32 T | u32 D | f32 frame_shift_ms
    T*D f32 values, row-major

KMCB v1 (k-means codebook)::

    magic "KMCB" | u32 version | u32 K | u32 D | f64 training_inertia
    K*D f64 centroids, row-major

DPRD v1 (duration model)::

    magic "DPRD" | u32 version
    u32 codebook_size | u32 embed_dim | u32 filter_size | u32 kernel_size
    f64 dropout_rate | f64 learning_rate | f64 adam_beta1 | f64 adam_beta2
    f64 adam_eps | u32 epochs | u32 batch_utterances | u64 seed | u32 max_duration
    f64 tensors, row-major, in ``durmodel.PARAM_ORDER``

Text artifacts: unit sequences are ``K <codebook_size>`` on the first line
followed by whitespace-separated ids. Alignments are 6-column TSV
(label, start, end, stress S|U|-, vowel 0|1, voiced 0|1) and prosody tracks
are 2-column TSV (pitch_hz, intensity_db), one row per frame. Blank lines and
lines starting with ``#`` are ignored in both TSV formats.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, TextIO

import numpy as np

from duraccent.errors import (
    FormatError,
    ParseError,
    TruncationError,
    ValidationError,
)

FMAT_MAGIC = b"FMAT"
KMCB_MAGIC = b"KMCB"
DPRD_MAGIC = b"DPRD"
FORMAT_VERSION = 1

SILENCE_LABELS = frozenset({"sil", "sp", ""})

_HEADER = struct.Struct("<4sI")
_FMAT_DIMS = struct.Struct("<IIf")
_KMCB_DIMS = struct.Struct("<IId")
_DPRD_HPARAMS = struct.Struct("<IIIIdddddIIQI")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """T x D float32 frame features for one utterance."""

    frames: np.ndarray
    frame_shift_ms: float = 20.0

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValidationError(f"feature matrix must be at least 1x1, got {frames.shape}")
        frames = frames.astype("<f4", copy=False)
        if not np.all(np.isfinite(frames)):
            raise ValidationError("feature matrix contains NaN or Inf")
        shift = float(np.float32(self.frame_shift_ms))
        if not (math.isfinite(shift) and shift > 0):
            raise ValidationError(f"frame_shift_ms must be positive, got {self.frame_shift_ms}")
        object.__setattr__(self, "frames", _frozen(frames))
        object.__setattr__(self, "frame_shift_ms", shift)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
            and self.frame_shift_ms == other.frame_shift_ms
        )


@dataclass(frozen=True, eq=False)
class UnitSequence:
    """Frame-wise unit ids drawn from a codebook of ``codebook_size`` entries."""

    units: np.ndarray
    codebook_size: int

    def __post_init__(self):
        units = np.asarray(self.units)
        if units.ndim != 1 or units.size < 1:
            raise ValidationError("unit sequence must be a non-empty 1-D array")
        if units.dtype.kind not in "iu":
            raise ValidationError(f"unit ids must be integers, got dtype {units.dtype}")
        k = int(self.codebook_size)
        if k < 1:
            raise ValidationError(f"codebook_size must be positive, got {k}")
        if units.min() < 0 or units.max() >= k:
            raise ValidationError(f"unit id out of range [0, {k})")
        object.__setattr__(self, "units", _frozen(units.astype(np.int64)))
        object.__setattr__(self, "codebook_size", k)

    def __len__(self) -> int:
        return self.units.size

    def __eq__(self, other):
        if not isinstance(other, UnitSequence):
            return NotImplemented
        return self.codebook_size == other.codebook_size and np.array_equal(
            self.units, other.units
        )

    def tolist(self) -> list[int]:
        return self.units.tolist()


@dataclass(frozen=True, eq=False)
class RunLengthSequence:
    """A unit sequence factored into (unit, duration) runs."""

    units: np.ndarray
    durations: np.ndarray
    codebook_size: int

    def __post_init__(self):
        units = np.asarray(self.units, dtype=np.int64)
        durations = np.asarray(self.durations, dtype=np.int64)
        if units.ndim != 1 or units.shape != durations.shape or units.size < 1:
            raise ValidationError("runs need equal-length, non-empty unit and duration arrays")
        if durations.min() < 1:
            raise ValidationError("run durations must be positive")
        if units.min() < 0 or units.max() >= self.codebook_size:
            raise ValidationError(f"unit id out of range [0, {self.codebook_size})")
        if np.any(units[1:] == units[:-1]):
            raise ValidationError("adjacent runs must have distinct unit ids")
        object.__setattr__(self, "units", _frozen(units))
        object.__setattr__(self, "durations", _frozen(durations))
        object.__setattr__(self, "codebook_size", int(self.codebook_size))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], codebook_size: int):
        pairs = list(pairs)
        if not pairs:
            raise ValidationError("run-length sequence must be non-empty")
        u, d = zip(*pairs)
        return cls(np.array(u), np.array(d), codebook_size)

    @property
    def runs(self) -> list[tuple[int, int]]:
        return list(zip(self.units.tolist(), self.durations.tolist()))

    def __len__(self) -> int:
        return self.units.size

    @property
    def total_frames(self) -> int:
        return int(self.durations.sum())

    def __eq__(self, other):
        if not isinstance(other, RunLengthSequence):
            return NotImplemented
        return (
            self.codebook_size == other.codebook_size
            and np.array_equal(self.units, other.units)
            and np.array_equal(self.durations, other.durations)
        )


STRESS_CODES = {"S": "stressed", "U": "unstressed", "-": "n/a"}
_STRESS_TO_CODE = {v: k for k, v in STRESS_CODES.items()}


@dataclass(frozen=True)
class Span:
    label: str
    start_frame: int
    end_frame: int
    stress: str = "n/a"
    is_vowel: bool = False
    is_voiced: bool = False

    @property
    def num_frames(self) -> int:
        return self.end_frame - self.start_frame

    @property
    def is_silence(self) -> bool:
        return self.label in SILENCE_LABELS


@dataclass(frozen=True)
class PhonemeAlignment:
    spans: tuple[Span, ...]

    def __post_init__(self):
        spans = tuple(self.spans)
        prev_end = None
        for s in spans:
            if s.start_frame < 0 or s.end_frame <= s.start_frame:
                raise ValidationError(
                    f"span {s.label!r} has invalid bounds [{s.start_frame}, {s.end_frame})"
                )
            if s.stress not in _STRESS_TO_CODE:
                raise ValidationError(f"unknown stress mark {s.stress!r}")
            if prev_end is not None and s.start_frame < prev_end:
                raise ValidationError(
                    f"span {s.label!r} at frame {s.start_frame} overlaps or precedes previous span"
                )
            prev_end = s.end_frame
        object.__setattr__(self, "spans", spans)

    def __len__(self):
        return len(self.spans)

    def without_silence(self) -> list[Span]:
        return [s for s in self.spans if not s.is_silence]


@dataclass(frozen=True, eq=False)
class ProsodyTrack:
    """Per-frame pitch (0 marks unvoiced) and intensity."""

    pitch_hz: np.ndarray
    intensity_db: np.ndarray

    def __post_init__(self):
        pitch = np.asarray(self.pitch_hz, dtype=np.float64)
        inten = np.asarray(self.intensity_db, dtype=np.float64)
        if pitch.ndim != 1 or pitch.shape != inten.shape or pitch.size < 1:
            raise ValidationError("pitch and intensity must be non-empty and equally long")
        if not (np.all(np.isfinite(pitch)) and np.all(np.isfinite(inten))):
            raise ValidationError("prosody track contains NaN or Inf")
        if np.any(pitch < 0):
            raise ValidationError("pitch must be non-negative")
        voiced = pitch > 0
        if np.any((pitch[voiced] < 20.0) | (pitch[voiced] > 2000.0)):
            raise ValidationError("voiced pitch must lie within [20, 2000] Hz")
        object.__setattr__(self, "pitch_hz", _frozen(pitch))
        object.__setattr__(self, "intensity_db", _frozen(inten))

    @property
    def num_frames(self) -> int:
        return self.pitch_hz.size

    @property
    def voiced(self) -> np.ndarray:
        return self.pitch_hz > 0

    def __eq__(self, other):
        if not isinstance(other, ProsodyTrack):
            return NotImplemented
        return np.array_equal(self.pitch_hz, other.pitch_hz) and np.array_equal(
            self.intensity_db, other.intensity_db
        )


@dataclass(frozen=True, eq=False)
class Codebook:
    """K x D centroid table produced by k-means.

    ``inertia_trace`` holds the per-iteration inertia of the training run; it is
    diagnostic only and is not persisted.
    """

    centroids: np.ndarray
    training_inertia: float = 0.0
    inertia_trace: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValidationError(f"centroids must be a non-empty K x D array, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("centroids contain NaN or Inf")
        if not (math.isfinite(self.training_inertia) and self.training_inertia >= 0):
            raise ValidationError("training_inertia must be finite and non-negative")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise ValidationError("codebook has duplicate centroids")
        object.__setattr__(self, "centroids", _frozen(c))
        object.__setattr__(self, "training_inertia", float(self.training_inertia))
        object.__setattr__(self, "inertia_trace", tuple(self.inertia_trace))

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (
            self.centroids.shape == other.centroids.shape
            and self.centroids.tobytes() == other.centroids.tobytes()
            and self.training_inertia == other.training_inertia
        )


# ---------------------------------------------------------------------------
# Binary helpers
# ---------------------------------------------------------------------------


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if buf is None or len(buf) < n:
        got = 0 if buf is None else len(buf)
        raise TruncationError(f"truncated {what}: expected {n} bytes, got {got}")
    return buf


def _read_header(source: BinaryIO, magic: bytes) -> int:
    tag, version = _HEADER.unpack(_read_exact(source, _HEADER.size, "header"))
    if tag != magic:
        raise FormatError(f"bad magic {tag!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")
    return version


def _read_f64(source: BinaryIO, shape: tuple[int, ...], what: str) -> np.ndarray:
    n = int(np.prod(shape))
    raw = _read_exact(source, 8 * n, what)
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# FMAT
# ---------------------------------------------------------------------------


def store_feature_matrix(m: FeatureMatrix, sink: BinaryIO) -> int:
    payload = m.frames.astype("<f4", copy=False).tobytes(order="C")
    head = _HEADER.pack(FMAT_MAGIC, FORMAT_VERSION) + _FMAT_DIMS.pack(
        m.num_frames, m.dim, m.frame_shift_ms
    )
    sink.write(head)
    sink.write(payload)
    return len(head) + len(payload)


def load_feature_matrix(source: BinaryIO) -> FeatureMatrix:
    _read_header(source, FMAT_MAGIC)
    t, d, shift = _FMAT_DIMS.unpack(_read_exact(source, _FMAT_DIMS.size, "FMAT dimensions"))
    if t < 1 or d < 1:
        raise FormatError(f"FMAT declares empty shape {t}x{d}")
    raw = _read_exact(source, 4 * t * d, "FMAT payload")
    frames = np.frombuffer(raw, dtype="<f4").reshape(t, d)
    if not np.all(np.isfinite(frames)):
        raise ValidationError("FMAT payload contains NaN or Inf")
    return FeatureMatrix(frames.copy(), shift)


# ---------------------------------------------------------------------------
# KMCB / DPRD
# ---------------------------------------------------------------------------


def store_codebook(cb: Codebook, sink: BinaryIO) -> int:
    head = _HEADER.pack(KMCB_MAGIC, FORMAT_VERSION) + _KMCB_DIMS.pack(
        cb.k, cb.dim, cb.training_inertia
    )
    payload = cb.centroids.astype("<f8").tobytes(order="C")
    sink.write(head)
    sink.write(payload)
    return len(head) + len(payload)


def load_codebook(source: BinaryIO) -> Codebook:
    _read_header(source, KMCB_MAGIC)
    k, d, inertia = _KMCB_DIMS.unpack(_read_exact(source, _KMCB_DIMS.size, "KMCB dimensions"))
    if k < 1 or d < 1:
        raise FormatError(f"KMCB declares empty shape {k}x{d}")
    return Codebook(_read_f64(source, (k, d), "KMCB centroids"), inertia)


def store_duration_model(model, sink: BinaryIO) -> int:
    from duraccent.durmodel import PARAM_ORDER

    cfg = model.config
    head = _HEADER.pack(DPRD_MAGIC, FORMAT_VERSION) + _DPRD_HPARAMS.pack(
        cfg.codebook_size,
        cfg.embed_dim,
        cfg.filter_size,
        cfg.kernel_size,
        cfg.dropout_rate,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        cfg.epochs,
        cfg.batch_utterances,
        cfg.seed,
        cfg.max_duration,
    )
    sink.write(head)
    n = len(head)
    for name in PARAM_ORDER:
        raw = np.asarray(model.params[name], dtype="<f8").tobytes(order="C")
        sink.write(raw)
        n += len(raw)
    return n


def load_duration_model(source: BinaryIO):
    from duraccent.durmodel import PARAM_ORDER, DurationModel, DurationModelConfig, param_shapes

    _read_header(source, DPRD_MAGIC)
    fields = _DPRD_HPARAMS.unpack(_read_exact(source, _DPRD_HPARAMS.size, "DPRD hyperparameters"))
    names = (
        "codebook_size embed_dim filter_size kernel_size dropout_rate learning_rate "
        "adam_beta1 adam_beta2 adam_eps epochs batch_utterances seed max_duration"
    ).split()
    try:
        cfg = DurationModelConfig(**dict(zip(names, fields)))
    except ValidationError as exc:
        raise FormatError(f"DPRD hyperparameters invalid: {exc}") from exc
    shapes = param_shapes(cfg)
    params = {name: _read_f64(source, shapes[name], f"DPRD tensor {name}") for name in PARAM_ORDER}
    return DurationModel(params, cfg)


def store_model(artifact, sink: BinaryIO) -> int:
    """Write a codebook (KMCB) or duration model (DPRD), chosen by type."""
    if isinstance(artifact, Codebook):
        return store_codebook(artifact, sink)
    return store_duration_model(artifact, sink)


def load_model(source: BinaryIO):
    """Read a KMCB or DPRD stream, dispatching on the magic tag."""
    head = _read_exact(source, 4, "header")
    rest = io.BytesIO(head + source.read())
    if head == KMCB_MAGIC:
        return load_codebook(rest)
    if head == DPRD_MAGIC:
        return load_duration_model(rest)
    raise FormatError(f"bad magic {head!r}, expected {KMCB_MAGIC!r} or {DPRD_MAGIC!r}")


# ---------------------------------------------------------------------------
# Unit-sequence text
# ---------------------------------------------------------------------------


def _parse_int(tok: str, what: str) -> int:
    try:
        return int(tok, 10)
    except ValueError:
        raise ParseError(f"non-integer {what} token {tok!r}") from None


def store_unit_sequence(s: UnitSequence, sink: TextIO) -> None:
    sink.write(f"K {s.codebook_size}\n")
    sink.write(" ".join(map(str, s.units.tolist())))
    sink.write("\n")


def load_unit_sequence(source: TextIO) -> UnitSequence:
    text = source.read()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty unit-sequence file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "K":
        raise ParseError(f"expected header 'K <codebook_size>', got {lines[0]!r}")
    k = _parse_int(head[1], "codebook size")
    if k < 1:
        raise ValidationError(f"codebook size must be positive, got {k}")
    ids = [_parse_int(tok, "unit id") for tok in " ".join(lines[1:]).split()]
    if not ids:
        raise ValidationError("unit sequence is empty")
    bad = [u for u in ids if u < 0 or u >= k]
    if bad:
        raise ValidationError(f"unit id {bad[0]} out of range [0, {k})")
    return UnitSequence(np.array(ids, dtype=np.int64), k)


# ---------------------------------------------------------------------------
# Alignment / prosody TSV
# ---------------------------------------------------------------------------


def _tsv_rows(source: TextIO):
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        yield lineno, line.split("\t")


def _parse_flag(tok: str, lineno: int, what: str) -> bool:
    if tok not in ("0", "1"):
        raise ParseError(f"line {lineno}: {what} must be 0 or 1, got {tok!r}")
    return tok == "1"


def load_alignment(source: TextIO) -> PhonemeAlignment:
    spans = []
    for lineno, cols in _tsv_rows(source):
        if len(cols) != 6:
            raise ParseError(f"line {lineno}: expected 6 columns, got {len(cols)}")
        label, start, end, stress, vowel, voiced = cols
        if stress not in STRESS_CODES:
            raise ParseError(f"line {lineno}: stress must be S, U or -, got {stress!r}")
        spans.append(
            Span(
                label=label,
                start_frame=_parse_int(start, "start_frame"),
                end_frame=_parse_int(end, "end_frame"),
                stress=STRESS_CODES[stress],
                is_vowel=_parse_flag(vowel, lineno, "vowel"),
                is_voiced=_parse_flag(voiced, lineno, "voiced"),
            )
        )
    return PhonemeAlignment(tuple(spans))


def store_alignment(a: PhonemeAlignment, sink: TextIO) -> None:
    for s in a.spans:
        sink.write(
            f"{s.label}\t{s.start_frame}\t{s.end_frame}\t{_STRESS_TO_CODE[s.stress]}"
            f"\t{int(s.is_vowel)}\t{int(s.is_voiced)}\n"
        )


def load_prosody(source: TextIO) -> ProsodyTrack:
    pitch, inten = [], []
    for lineno, cols in _tsv_rows(source):
        if len(cols) != 2:
            raise ParseError(f"line {lineno}: expected 2 columns, got {len(cols)}")
        try:
            p, i = float(cols[0]), float(cols[1])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric prosody value") from None
        pitch.append(p)
        inten.append(i)
    if not pitch:
        raise ValidationError("prosody track is empty")
    return ProsodyTrack(np.array(pitch), np.array(inten))


def store_prosody(p: ProsodyTrack, sink: TextIO) -> None:
    for f0, db in zip(p.pitch_hz.tolist(), p.intensity_db.tolist()):
        sink.write(f"{f0!r}\t{db!r}\n")


# ---------------------------------------------------------------------------
# Path conveniences
# ---------------------------------------------------------------------------


def read_features(path) -> FeatureMatrix:
    with open(path, "rb") as f:
        return load_feature_matrix(f)


def write_features(path, m: FeatureMatrix) -> int:
    with open(path, "wb") as f:
        return store_feature_matrix(m, f)


def read_units(path) -> UnitSequence:
    with open(path, encoding="utf-8") as f:
        return load_unit_sequence(f)


def write_units(path, s: UnitSequence) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        store_unit_sequence(s, f)


def read_alignment(path) -> PhonemeAlignment:
    with open(path, encoding="utf-8") as f:
        return load_alignment(f)


def read_prosody(path) -> ProsodyTrack:
    with open(path, encoding="utf-8") as f:
        return load_prosody(f)


def read_model(path):
    with open(path, "rb") as f:
        return load_model(f)


def write_model(path, artifact) -> int:
    with open(path, "wb") as f:
        return store_model(artifact, f)


def read_manifest(path, column: int = 0) -> list[Path]:
    """Read a manifest: one entry per line, optionally tab-separated columns.

    Relative paths resolve against the manifest's directory. Blank lines and
    ``#`` comments are skipped.
    """
    base = Path(path).parent
    return [p if p.is_absolute() else base / p for p in map(Path, manifest_entries(path, column))]


def manifest_entries(path, column: int = 0) -> list[str]:
    """Raw manifest entries, exactly as written."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if column >= len(cols):
                raise ParseError(f"{path}:{lineno}: missing column {column}")
            out.append(cols[column])
    return out
