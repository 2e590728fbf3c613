"""Command-line entry point: ``duraccent <command> ...``.

Exit codes: 0 success, 2 usage/config/data error that stops the command,
3 partial failure (some files failed, the rest were processed), 4 internal
error.

Config files (``--config``) hold ``key=value`` lines with ``#`` comments; the
keys are the fields of the command's config dataclass. ``--set key=value``
and dedicated flags override file values, in that order. Unknown keys are
rejected.

``evaluate`` reads a pairs manifest of tab-separated rows::

    utt_id  role(test|ref)  features.fmat  prosody.tsv  [alignment.tsv]

Rows sharing an ``utt_id`` form one bundle (exactly one ``test`` row, one or
more ``ref`` rows); relative paths resolve against the manifest directory.
The report TSV has one row per utterance plus ``__mean__`` (per-utterance
average) and ``__pooled__`` (single correlation over all pooled pairs) rows::

    utt_id  pitch_corr  intensity_corr  duration_corr  n_refs  n_skipped  n_duration_refs

Unavailable values are written as ``NA:<reason>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import typing
from collections import OrderedDict
from pathlib import Path

import numpy as np

from duraccent import dataio, evaluation, synthgen
from duraccent.accent import PipelineMode, batch_simulate
from duraccent.durmodel import DurationModelConfig, build_training_set, train
from duraccent.errors import (
    DataError,
    DegenerateInputError,
    InsufficientDataError,
    LabelMismatchError,
    ValidationError,
)
from duraccent.tokenizer import KMeansConfig, train_codebook
from duraccent.unitseq import duration_stats

log = logging.getLogger("duraccent")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _num(x: float) -> str:
    return f"{x:.10g}"


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def _coerce(value: str, typ, key: str):
    origin = typing.get_origin(typ)
    if typ is bool:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
    try:
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return value
        if origin is tuple:
            parts = value.replace(",", " ").split()
            return tuple(_coerce(p, a, key) for p, a in zip(parts, typing.get_args(typ)))
    except ValueError:
        pass
    raise UsageError(f"bad value for {key}: {value!r}")


def build_config(cls, config_path, sets, overrides: dict, fixed: dict | None = None):
    """Instantiate dataclass ``cls`` from file values < --set values < flag overrides."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    fixed = fixed or {}
    values: dict = {}
    raw: dict[str, str] = {}
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        raw.update(parse_config_text(text, str(config_path)))
    for item in sets or []:
        raw.update(parse_config_text(item, "--set"))
    for key, value in raw.items():
        if key not in names:
            raise UsageError(f"unknown config key {key!r}")
        if key in fixed:
            raise UsageError(f"config key {key!r} is fixed by the input data")
        values[key] = _coerce(value, hints[key], key)
    values.update({k: v for k, v in overrides.items() if v is not None})
    values.update(fixed)
    try:
        return cls(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _read_manifest(path, column=0):
    try:
        return dataio.read_manifest(path, column), dataio.manifest_entries(path, column)
    except OSError as exc:
        raise UsageError(f"cannot read manifest: {exc}") from None


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train_kmeans(args) -> int:
    paths, _ = _read_manifest(args.features)
    cfg = build_config(
        KMeansConfig, args.config, args.set,
        {"k": args.k, "seed": args.seed, "max_iterations": args.max_iter, "rel_tolerance": args.tol},
    )
    corpus = [dataio.read_features(p) for p in paths]
    cb = train_codebook(corpus, cfg)
    dataio.write_model(_out_file(args.out), cb)
    print("inertia\titerations")
    print(f"{_num(cb.training_inertia)}\t{len(cb.inertia_trace)}")
    return EXIT_OK


def _load_codebook(path):
    cb = dataio.read_model(path)
    if not isinstance(cb, dataio.Codebook):
        raise UsageError(f"{path} is not a codebook")
    return cb


def _load_durmodel(path):
    model = dataio.read_model(path)
    if isinstance(model, dataio.Codebook):
        raise UsageError(f"{path} is a codebook, not a duration model")
    return model


def cmd_encode(args) -> int:
    paths, labels = _read_manifest(args.features)
    cb = _load_codebook(args.codebook)
    rows = batch_simulate(paths, cb, None, PipelineMode.BASELINE, args.out_dir,
                          labels=labels, report_name="report.tsv")
    return EXIT_OK if all(r.ok for r in rows) else EXIT_PARTIAL


def cmd_train_durpred(args) -> int:
    paths, _ = _read_manifest(args.units)
    if not paths:
        raise UsageError("units manifest is empty")
    corpus = [dataio.read_units(p) for p in paths]
    ks = {s.codebook_size for s in corpus}
    if len(ks) != 1:
        raise ValidationError(f"unit files disagree on codebook size: {sorted(ks)}")
    cfg = build_config(
        DurationModelConfig, args.config, args.set,
        {"seed": args.seed, "epochs": args.epochs},
        fixed={"codebook_size": ks.pop()},
    )
    model = train(build_training_set(corpus), cfg)
    out = _out_file(args.out)
    dataio.write_model(out, model)
    loss_path = _out_file(args.loss_out) if args.loss_out else out.with_name(out.name + ".loss.tsv")
    with open(loss_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch\tloss\n")
        for i, loss in enumerate(model.loss_trace, start=1):
            f.write(f"{i}\t{loss!r}\n")
    print(f"final_loss\n{_num(model.loss_trace[-1])}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    mode = PipelineMode.parse(args.mode)
    if mode is PipelineMode.DUR_MOD and not args.model:
        raise UsageError("--mode dur-mod requires --model")
    if args.features:
        if not args.codebook:
            raise UsageError("--features requires --codebook")
        paths, labels = _read_manifest(args.features)
        source = "features"
        cb = _load_codebook(args.codebook)
    else:
        paths, labels = _read_manifest(args.units)
        source = "units"
        cb = None
    model = _load_durmodel(args.model) if args.model else None
    rows = batch_simulate(paths, cb, model, mode, args.out_dir, source=source, labels=labels)
    return EXIT_OK if all(r.ok for r in rows) else EXIT_PARTIAL


def cmd_stats(args) -> int:
    paths, _ = _read_manifest(args.units)
    if not paths:
        raise UsageError("units manifest is empty")
    stats = duration_stats([dataio.read_units(p) for p in paths])
    sys.stdout.write(stats.to_tsv())
    return EXIT_OK


def _read_pairs_manifest(path):
    base = Path(path).parent
    bundles: OrderedDict[str, dict] = OrderedDict()
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read pairs manifest: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (4, 5) or cols[1] not in ("test", "ref"):
            raise UsageError(f"{path}:{lineno}: expected utt_id, test|ref, features, prosody[, alignment]")
        resolved = [p if Path(p).is_absolute() else str(base / p) for p in cols[2:]]
        item = {"features": resolved[0], "prosody": resolved[1],
                "alignment": resolved[2] if len(resolved) > 2 and resolved[2] else None}
        b = bundles.setdefault(cols[0], {"test": None, "refs": []})
        if cols[1] == "test":
            if b["test"] is not None:
                raise UsageError(f"{path}:{lineno}: second test row for {cols[0]!r}")
            b["test"] = item
        else:
            b["refs"].append(item)
    for utt, b in bundles.items():
        if b["test"] is None or not b["refs"]:
            raise UsageError(f"bundle {utt!r} needs one test row and at least one ref row")
    return bundles


def _load_item(item):
    feats = dataio.read_features(item["features"])
    pros = dataio.read_prosody(item["prosody"])
    ali = dataio.read_alignment(item["alignment"]) if item["alignment"] else None
    return feats, pros, ali


def _na(reason: str) -> str:
    return f"NA:{reason}"


def cmd_evaluate(args) -> int:
    bundles = _read_pairs_manifest(args.pairs)
    rows = []
    failed = 0
    pooled = {k: [] for k in ("tp", "rp", "ti", "ri", "td", "rd")}
    per_utt = {"pitch": [], "intensity": [], "duration": []}
    test_alignments, ref_alignments = [], []
    shift = None
    for utt, b in bundles.items():
        try:
            test = _load_item(b["test"])
            refs = [_load_item(r) for r in b["refs"]]
        except (DataError, OSError) as exc:
            log.warning("%s: %s", utt, exc)
            rows.append([utt] + [_na("load-error")] * 3 + ["0", "0", "0"])
            failed += 1
            continue
        shift = shift or test[0].frame_shift_ms
        pitches, intens, skipped = [], [], 0
        for ref in refs:
            try:
                pairs = evaluation.voiced_pairs(test[:2], ref[:2], args.distance)
                p = evaluation.pearson(pairs.test_pitch, pairs.ref_pitch)
                i = evaluation.pearson(pairs.test_intensity, pairs.ref_intensity)
            except (DegenerateInputError, InsufficientDataError):
                skipped += 1
                continue
            pitches.append(p)
            intens.append(i)
            pooled["tp"].append(pairs.test_pitch)
            pooled["rp"].append(pairs.ref_pitch)
            pooled["ti"].append(pairs.test_intensity)
            pooled["ri"].append(pairs.ref_intensity)
        if pitches:
            pc, ic = float(np.mean(pitches)), float(np.mean(intens))
            per_utt["pitch"].append(pc)
            per_utt["intensity"].append(ic)
            pitch_s, inten_s = _num(pc), _num(ic)
        else:
            pitch_s = inten_s = _na("degenerate")

        durs, reason = [], "no-alignment"
        if test[2] is not None:
            test_alignments.append(test[2])
            for ref in refs:
                if ref[2] is None:
                    continue
                try:
                    durs.append(evaluation.duration_correlation(test[2], ref[2]))
                except LabelMismatchError:
                    reason = "label-mismatch"
                    continue
                except (DegenerateInputError, InsufficientDataError):
                    reason = "degenerate"
                    continue
                _, td = evaluation.phoneme_durations(test[2])
                _, rd = evaluation.phoneme_durations(ref[2])
                pooled["td"].append(td)
                pooled["rd"].append(rd)
        ref_alignments.extend(r[2] for r in refs if r[2] is not None)
        if durs:
            dc = float(np.mean(durs))
            per_utt["duration"].append(dc)
            dur_s = _num(dc)
        else:
            dur_s = _na(reason)
        rows.append([utt, pitch_s, inten_s, dur_s, str(len(pitches)), str(skipped), str(len(durs))])

    def mean_or_na(vals):
        return _num(float(np.mean(vals))) if vals else _na("empty")

    def pooled_corr(a, b):
        if not pooled[a]:
            return _na("empty")
        try:
            return _num(evaluation.pearson(np.concatenate(pooled[a]), np.concatenate(pooled[b])))
        except (DegenerateInputError, InsufficientDataError):
            return _na("degenerate")

    rows.append(["__mean__", mean_or_na(per_utt["pitch"]), mean_or_na(per_utt["intensity"]),
                 mean_or_na(per_utt["duration"]), str(len(per_utt["pitch"])), "", str(len(per_utt["duration"]))])
    rows.append(["__pooled__", pooled_corr("tp", "rp"), pooled_corr("ti", "ri"),
                 pooled_corr("td", "rd"), "", "", ""])
    with open(_out_file(args.report), "w", encoding="utf-8", newline="\n") as f:
        f.write("utt_id\tpitch_corr\tintensity_corr\tduration_corr\tn_refs\tn_skipped\tn_duration_refs\n")
        for r in rows:
            f.write("\t".join(r) + "\n")

    if test_alignments or ref_alignments:
        print("set\tstressed_ms\tunstressed_ms\tratio\tn_stressed\tn_unstressed")
        for name, alis in (("test", test_alignments), ("ref", ref_alignments)):
            try:
                v = evaluation.vowel_duration_ratio(alis, shift or 20.0)
            except InsufficientDataError:
                print(f"{name}\t{_na('insufficient')}\t{_na('insufficient')}\t{_na('insufficient')}\t\t")
                continue
            print(f"{name}\t{_num(v.stressed_ms)}\t{_num(v.unstressed_ms)}\t{_num(v.ratio)}"
                  f"\t{v.n_stressed}\t{v.n_unstressed}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_gen_corpus(args) -> int:
    if args.profile == "custom":
        if args.mean is None or args.sd is None:
            raise UsageError("--profile custom requires --mean and --sd")
        profile = synthgen.RhythmProfile("custom", args.mean, args.sd)
    else:
        if args.mean is not None or args.sd is not None:
            raise UsageError("--mean/--sd only apply to --profile custom")
        profile = synthgen.PROFILES[args.profile]
    overrides = {
        "k": args.k, "num_utterances": args.n, "seed": args.seed, "dim": args.dim,
        "noise_sd": args.noise_sd, "centroid_scale": args.scale,
    }
    if args.min_len is not None or args.max_len is not None:
        lo, hi = synthgen.SynthConfig.utterance_length_frames
        overrides["utterance_length_frames"] = (args.min_len or lo, args.max_len or hi)
    fixed = None
    if args.codebook:
        cb = _load_codebook(args.codebook)
        for flag, have, want in (("--k", args.k, cb.k), ("--dim", args.dim, cb.dim)):
            if have is not None and have != want:
                raise UsageError(f"{flag} {have} disagrees with the codebook ({want})")
        overrides["k"] = overrides["dim"] = None
        fixed = {"k": cb.k, "dim": cb.dim}
    cfg = build_config(synthgen.SynthConfig, args.config, args.set, overrides, fixed)
    if not args.codebook:
        cb = synthgen.gen_codebook(cfg)
    manifest = synthgen.gen_corpus(cb, profile, cfg, args.out_dir)
    print(f"manifest\tutterances\n{manifest}\t{cfg.num_utterances}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duraccent", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-kmeans", help="train a k-means codebook")
    p.add_argument("--features", required=True, help="manifest of FMAT files")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_kmeans)

    p = sub.add_parser("encode", help="quantize feature files to unit sequences")
    p.add_argument("--features", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train-durpred", help="train the unit duration predictor")
    p.add_argument("--units", required=True, help="manifest of unit files")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-out", help="loss TSV path (default <out>.loss.tsv)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_durpred)

    p = sub.add_parser("simulate", help="apply duration modification")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features")
    src.add_argument("--units")
    p.add_argument("--codebook")
    p.add_argument("--model")
    p.add_argument("--mode", required=True, choices=[m.value for m in PipelineMode])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stats", help="unit-duration mean/sd/count")
    p.add_argument("--units", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("evaluate", help="prosody correlations against references")
    p.add_argument("--pairs", required=True)
    p.add_argument("--distance", default="cosine", choices=evaluation.DISTANCES)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--profile", required=True, choices=["mora", "stress", "custom"])
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--min-len", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--mean", type=float)
    p.add_argument("--sd", type=float)
    p.add_argument("--codebook", help="reuse this KMCB as the generating centroids")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
