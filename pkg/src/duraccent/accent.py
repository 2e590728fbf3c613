"""Duration-modification pipeline: encode, de-duplicate, re-predict durations."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from duraccent import dataio
from duraccent.dataio import Codebook, FeatureMatrix, UnitSequence
from duraccent.durmodel import DurationModel, expand
from duraccent.errors import DataError, ValidationError
from duraccent.tokenizer import encode_frames
from duraccent.unitseq import deduplicate, run_length_encode

log = logging.getLogger(__name__)


class PipelineMode(enum.Enum):
    BASELINE = "baseline"
    DEDUP_ONLY = "dedup"
    DUR_MOD = "dur-mod"

    @classmethod
    def parse(cls, name: str) -> "PipelineMode":
        aliases = {"dedup_only": "dedup", "dur_mod": "dur-mod"}
        try:
            return cls(aliases.get(name, name))
        except ValueError:
            raise ValidationError(f"unknown pipeline mode {name!r}") from None


def modify_sequence(s: UnitSequence, model: DurationModel | None, mode: PipelineMode) -> UnitSequence:
    if mode is PipelineMode.BASELINE:
        return s
    dedup = deduplicate(s)
    if mode is PipelineMode.DEDUP_ONLY:
        return dedup
    if model is None:
        raise ValidationError("dur-mod mode needs a duration model")
    if s.codebook_size != model.config.codebook_size:
        raise ValidationError(
            f"sequence codebook size {s.codebook_size} != model codebook size "
            f"{model.config.codebook_size}"
        )
    return expand(model, dedup)


def simulate_accent(features: FeatureMatrix, cb: Codebook, model: DurationModel | None,
                    mode: PipelineMode) -> UnitSequence:
    return modify_sequence(encode_frames(features, cb), model, mode)


@dataclass
class ReportRow:
    path: str
    output: str = ""
    input_length: int | None = None
    output_length: int | None = None
    run_count: int | None = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


REPORT_HEADER = "path\toutput\tinput_length\toutput_length\trun_count\tstatus"


def _fmt(v) -> str:
    return "" if v is None else str(v)


def write_report(rows: Sequence[ReportRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(REPORT_HEADER + "\n")
        for r in rows:
            status = "ok" if r.ok else "error:" + r.error.replace("\t", " ").replace("\n", " ")
            f.write(
                f"{r.path}\t{r.output}\t{_fmt(r.input_length)}\t{_fmt(r.output_length)}"
                f"\t{_fmt(r.run_count)}\t{status}\n"
            )


def output_names(paths: Sequence[Path], suffix: str = ".units") -> list[str]:
    """Stable, collision-free output file names derived from input stems."""
    names, seen = [], set()
    for i, p in enumerate(paths):
        name = Path(p).stem + suffix
        if name in seen:
            name = f"{Path(p).stem}_{i}{suffix}"
        seen.add(name)
        names.append(name)
    return names


def batch_simulate(inputs: Sequence, cb: Codebook | None, model: DurationModel | None,
                   mode: PipelineMode, out_dir, source: str = "features",
                   labels: Sequence[str] | None = None,
                   report_name: str = "summary.tsv") -> list[ReportRow]:
    """Run the pipeline over many files with per-file error isolation.

    ``source`` is ``"features"`` (FMAT inputs, encoded with ``cb``) or
    ``"units"`` (unit-sequence text inputs). Writes one unit file per
    successful input plus a summary TSV into ``out_dir``; rows follow input
    order and name each input by ``labels`` when given.
    """
    if source not in ("features", "units"):
        raise ValidationError(f"unknown input kind {source!r}")
    if source == "features" and cb is None:
        raise ValidationError("feature inputs need a codebook")
    if mode is PipelineMode.DUR_MOD and model is None:
        raise ValidationError("dur-mod mode needs a duration model")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    labels = [str(p) for p in inputs] if labels is None else list(labels)
    for path, label, name in zip(inputs, labels, output_names(inputs)):
        row = ReportRow(path=label)
        try:
            if source == "features":
                s = encode_frames(dataio.read_features(path), cb)
            else:
                s = dataio.read_units(path)
            out = modify_sequence(s, model, mode)
            dataio.write_units(out_dir / name, out)
            row.output = name
            row.input_length = len(s)
            row.output_length = len(out)
            row.run_count = len(run_length_encode(out))
        except (DataError, OSError) as exc:
            log.warning("%s: %s", path, exc)
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    write_report(rows, out_dir / report_name)
    return rows
