import numpy as np
import pytest

from duraccent import dataio
from duraccent.cli import main
from duraccent.dataio import FeatureMatrix, PhonemeAlignment, ProsodyTrack, Span, UnitSequence
from duraccent.unitseq import duration_stats


def write_list(path, entries):
    path.write_text("".join(f"{e}\n" for e in entries))
    return str(path)


@pytest.fixture
def corpus(tmp_path):
    d = tmp_path / "corpus"
    rc = main(["gen-corpus", "--profile", "mora", "--n", "10", "--k", "8", "--dim", "3",
               "--noise-sd", "0", "--min-len", "30", "--max-len", "60", "--out-dir", str(d)])
    assert rc == 0
    return d


def test_gen_corpus(corpus):
    assert len(list(corpus.glob("*.fmat"))) == 10
    assert len(list(corpus.glob("*.units"))) == 10


def test_gen_corpus_custom_needs_mean(tmp_path, capsys):
    rc = main(["gen-corpus", "--profile", "custom", "--sd", "1", "--out-dir", str(tmp_path / "x")])
    assert rc == 2
    assert "--mean" in capsys.readouterr().err


def test_gen_corpus_custom(tmp_path):
    rc = main(["gen-corpus", "--profile", "custom", "--mean", "3", "--sd", "0", "--n", "2",
               "--out-dir", str(tmp_path / "x")])
    assert rc == 0
    s = dataio.read_units(tmp_path / "x" / "utt_00000.units")
    assert s.units.size > 0


def test_kmeans_encode_recovers_ground_truth(corpus, tmp_path, capsys):
    cb = tmp_path / "cb.kmcb"
    assert main(["train-kmeans", "--features", str(corpus / "features.list"), "--k", "8",
                 "--out", str(cb)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "inertia\titerations"
    # encoding with the generating codebook is exact at zero noise
    enc = tmp_path / "enc"
    assert main(["encode", "--features", str(corpus / "features.list"),
                 "--codebook", str(corpus / "codebook.kmcb"), "--out-dir", str(enc)]) == 0
    for i in range(10):
        got = dataio.read_units(enc / f"utt_{i:05d}.units")
        assert got == dataio.read_units(corpus / f"utt_{i:05d}.units")
    assert len((enc / "report.tsv").read_text().splitlines()) == 11


def test_train_kmeans_insufficient(tmp_path, capsys):
    f = tmp_path / "a.fmat"
    dataio.write_features(f, FeatureMatrix(np.zeros((3, 2))))
    rc = main(["train-kmeans", "--features", write_list(tmp_path / "m", [f]), "--k", "5",
               "--out", str(tmp_path / "cb.kmcb")])
    assert rc == 2
    assert "insufficient data" in capsys.readouterr().err
    assert not (tmp_path / "cb.kmcb").exists()


def test_train_kmeans_deterministic(corpus, tmp_path):
    for name in ("a", "b"):
        assert main(["train-kmeans", "--features", str(corpus / "features.list"), "--k", "4",
                     "--seed", "3", "--out", str(tmp_path / f"{name}.kmcb")]) == 0
    assert (tmp_path / "a.kmcb").read_bytes() == (tmp_path / "b.kmcb").read_bytes()


def test_encode_partial_failure(corpus, tmp_path):
    bad = tmp_path / "bad.fmat"
    bad.write_bytes(b"FMAT\x01\x00\x00\x00\x05")
    m = write_list(tmp_path / "m", [corpus / "utt_00000.fmat", bad, corpus / "utt_00001.fmat"])
    rc = main(["encode", "--features", m, "--codebook", str(corpus / "codebook.kmcb"),
               "--out-dir", str(tmp_path / "enc")])
    assert rc == 3
    report = (tmp_path / "enc" / "report.tsv").read_text().splitlines()
    assert str(bad) in report[2] and "error:" in report[2]


def test_encode_empty_manifest(corpus, tmp_path):
    rc = main(["encode", "--features", write_list(tmp_path / "m", []),
               "--codebook", str(corpus / "codebook.kmcb"), "--out-dir", str(tmp_path / "enc")])
    assert rc == 0
    assert len((tmp_path / "enc" / "report.tsv").read_text().splitlines()) == 1


def test_train_durpred_and_simulate(corpus, tmp_path, capsys):
    model = tmp_path / "m.dprd"
    conf = tmp_path / "dur.conf"
    conf.write_text("# small model\nembed_dim=4\nfilter_size=8\n")
    args = ["train-durpred", "--units", str(corpus / "units.list"), "--config", str(conf),
            "--set", "epochs=3", "--out", str(model)]
    assert main(args) == 0
    first = model.read_bytes()
    loss = (tmp_path / "m.dprd.loss.tsv").read_text().splitlines()
    assert loss[0] == "epoch\tloss" and len(loss) == 4
    assert main(args) == 0
    assert model.read_bytes() == first
    m = dataio.read_model(model)
    assert (m.config.embed_dim, m.config.filter_size, m.config.epochs) == (4, 8, 3)

    out = tmp_path / "sim"
    assert main(["simulate", "--units", str(corpus / "units.list"), "--model", str(model),
                 "--mode", "dur-mod", "--out-dir", str(out)]) == 0
    assert len((out / "summary.tsv").read_text().splitlines()) == 11

    base = tmp_path / "base"
    assert main(["simulate", "--features", str(corpus / "features.list"), "--codebook",
                 str(corpus / "codebook.kmcb"), "--mode", "baseline", "--out-dir", str(base)]) == 0
    assert dataio.read_units(base / "utt_00004.units") == dataio.read_units(corpus / "utt_00004.units")


def test_simulate_dur_mod_needs_model(corpus, tmp_path, capsys):
    rc = main(["simulate", "--units", str(corpus / "units.list"), "--mode", "dur-mod",
               "--out-dir", str(tmp_path / "o")])
    assert rc == 2
    assert "usage error" in capsys.readouterr().err


def test_train_durpred_empty_manifest(tmp_path):
    rc = main(["train-durpred", "--units", write_list(tmp_path / "m", []), "--out", str(tmp_path / "x.dprd")])
    assert rc == 2


def test_unknown_config_key(corpus, tmp_path, capsys):
    rc = main(["train-durpred", "--units", str(corpus / "units.list"), "--set", "hidden=3",
               "--out", str(tmp_path / "x.dprd")])
    assert rc == 2
    assert "hidden" in capsys.readouterr().err


def test_bad_config_value(corpus, tmp_path):
    rc = main(["train-kmeans", "--features", str(corpus / "features.list"), "--set", "k=many",
               "--out", str(tmp_path / "c.kmcb")])
    assert rc == 2


def test_unknown_command():
    assert main(["frobnicate"]) == 2


def test_stats_worked_example(tmp_path, capsys):
    u = tmp_path / "u.units"
    dataio.write_units(u, UnitSequence(np.array([2, 2, 1, 2, 3, 3]), 4))
    assert main(["stats", "--units", write_list(tmp_path / "m", [u])]) == 0
    assert capsys.readouterr().out == "mean\tsd\tcount\n1.5\t0.5\t4\n"


def test_stats_out_of_range_id(tmp_path, capsys):
    u = tmp_path / "u.units"
    u.write_text("K 4\n1 2 7\n")
    assert main(["stats", "--units", write_list(tmp_path / "m", [u])]) == 2
    assert "out of range" in capsys.readouterr().err


# --- evaluate --------------------------------------------------------------------------


def _write_bundle(d, name, rng, labels, durs, pitch_seed=0):
    n = sum(durs)
    feats = FeatureMatrix(np.random.default_rng(7).normal(size=(n, 3)))
    prng = np.random.default_rng(pitch_seed)
    pros = ProsodyTrack(prng.uniform(90, 250, n), prng.uniform(40, 70, n))
    spans, t = [], 0
    for lab, k in zip(labels, durs):
        vowel = lab in ("AA", "IY")
        spans.append(Span(lab, t, t + k, "stressed" if lab == "AA" else ("unstressed" if vowel else "n/a"),
                          vowel, True))
        t += k
    dataio.write_features(d / f"{name}.fmat", feats)
    with open(d / f"{name}.prosody.tsv", "w") as f:
        dataio.store_prosody(pros, f)
    with open(d / f"{name}.align.tsv", "w") as f:
        dataio.store_alignment(PhonemeAlignment(tuple(spans)), f)
    return [f"{name}.fmat", f"{name}.prosody.tsv", f"{name}.align.tsv"]


def read_report(path):
    lines = path.read_text().splitlines()
    head = lines[0].split("\t")
    return {r.split("\t")[0]: dict(zip(head, r.split("\t"))) for r in lines[1:]}


def test_evaluate_identical_and_mismatch(tmp_path, capsys):
    rng = np.random.default_rng(0)
    a = _write_bundle(tmp_path, "a", rng, ["AA", "T", "IY"], [6, 3, 4])
    b = _write_bundle(tmp_path, "b", rng, ["AA", "D", "IY"], [6, 3, 4])
    rows = [["u1", "test", *a], ["u1", "ref", *a], ["u2", "test", *a], ["u2", "ref", *b]]
    (tmp_path / "pairs.tsv").write_text("".join("\t".join(r) + "\n" for r in rows))
    rc = main(["evaluate", "--pairs", str(tmp_path / "pairs.tsv"), "--report", str(tmp_path / "r.tsv")])
    assert rc == 0
    rep = read_report(tmp_path / "r.tsv")
    assert float(rep["u1"]["pitch_corr"]) == pytest.approx(1.0)
    assert float(rep["u1"]["intensity_corr"]) == pytest.approx(1.0)
    assert float(rep["u1"]["duration_corr"]) == pytest.approx(1.0)
    assert rep["u2"]["duration_corr"] == "NA:label-mismatch"
    assert float(rep["u2"]["pitch_corr"]) == pytest.approx(1.0)
    assert set(rep) == {"u1", "u2", "__mean__", "__pooled__"}
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("set\tstressed_ms")
    test_row = out[1].split("\t")
    assert test_row[0] == "test" and float(test_row[3]) == pytest.approx(6 / 4)


def test_evaluate_missing_file_is_partial(tmp_path):
    a = _write_bundle(tmp_path, "a", np.random.default_rng(0), ["AA", "T"], [4, 4])
    rows = [["u1", "test", *a], ["u1", "ref", *a], ["u2", "test", "missing.fmat", a[1]], ["u2", "ref", *a]]
    (tmp_path / "pairs.tsv").write_text("".join("\t".join(r) + "\n" for r in rows))
    rc = main(["evaluate", "--pairs", str(tmp_path / "pairs.tsv"), "--report", str(tmp_path / "r.tsv")])
    assert rc == 3
    assert read_report(tmp_path / "r.tsv")["u2"]["pitch_corr"] == "NA:load-error"


def test_evaluate_bad_manifest(tmp_path):
    (tmp_path / "pairs.tsv").write_text("u1\tboth\ta\tb\n")
    assert main(["evaluate", "--pairs", str(tmp_path / "pairs.tsv"), "--report", str(tmp_path / "r.tsv")]) == 2


def test_gen_corpus_reuses_codebook(corpus, tmp_path):
    out = tmp_path / "stress"
    assert main(["gen-corpus", "--profile", "stress", "--codebook", str(corpus / "codebook.kmcb"),
                 "--n", "3", "--seed", "1", "--noise-sd", "0", "--out-dir", str(out)]) == 0
    assert (out / "codebook.kmcb").read_bytes() == (corpus / "codebook.kmcb").read_bytes()
    assert main(["gen-corpus", "--profile", "stress", "--codebook", str(corpus / "codebook.kmcb"),
                 "--k", "9", "--out-dir", str(tmp_path / "x")]) == 2
