import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duraccent.dataio import FeatureMatrix, PhonemeAlignment, ProsodyTrack, Span
from duraccent.errors import (
    DegenerateInputError,
    InsufficientDataError,
    LabelMismatchError,
    ValidationError,
)
from duraccent.evaluation import (
    DISTANCES,
    check_path,
    dtw_align,
    duration_correlation,
    frame_distances,
    pearson,
    prosody_correlation,
    vowel_duration_ratio,
)

from oracles import dtw_exhaustive, local_distance


def posteriors(rng, n, d):
    x = rng.random((n, d)) + 1e-3
    return x / x.sum(axis=1, keepdims=True)


# --- DTW --------------------------------------------------------------------


@pytest.mark.parametrize("distance", DISTANCES)
def test_self_alignment_is_diagonal(rng, distance):
    a = posteriors(rng, 7, 4)
    path, cost = dtw_align(a, a, distance)
    assert cost <= 1e-9
    assert path == [(i, i) for i in range(7)]


def test_two_by_three_fixture():
    path, cost = dtw_align(np.array([0.0, 1.0]), np.array([0.0, 1.0, 1.0]), "euclidean")
    assert cost == 0.0
    assert path == [(0, 0), (1, 1), (1, 2)]
    assert dtw_exhaustive([0.0, 1.0], [0.0, 1.0, 1.0], "euclidean") == 0.0


def test_tie_break_prefers_diagonal_then_vertical():
    # all local costs equal: every path of equal length ties; diagonal moves come first when walking back
    a = np.ones((3, 1))
    b = np.ones((2, 1))
    path, cost = dtw_align(a, b, "euclidean")
    assert cost == 0.0
    assert path == [(0, 0), (1, 0), (2, 1)]


@pytest.mark.parametrize("distance", DISTANCES)
def test_dtw_matches_exhaustive_enumeration(rng, distance):
    for _ in range(15):
        n, m, d = int(rng.integers(1, 8)), int(rng.integers(1, 8)), int(rng.integers(1, 4))
        a, b = posteriors(rng, n, d), posteriors(rng, m, d)
        path, cost = dtw_align(a, b, distance)
        check_path(path, n, m)
        assert cost == pytest.approx(dtw_exhaustive(a, b, distance), abs=1e-9)
        local = np.array([[local_distance(a[i], b[j], distance) for j in range(m)] for i in range(n)])
        assert sum(local[i, j] for i, j in path) == pytest.approx(cost, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from(DISTANCES), st.integers(0, 2**32))
def test_dtw_symmetric(n, m, distance, seed):
    rng = np.random.default_rng(seed)
    a, b = posteriors(rng, n, 3), posteriors(rng, m, 3)
    _, ab = dtw_align(a, b, distance)
    _, ba = dtw_align(b, a, distance)
    assert ab == pytest.approx(ba, abs=1e-9)


def test_frame_distances_match_scalar_oracle(rng):
    a, b = posteriors(rng, 4, 3), posteriors(rng, 5, 3)
    for distance in DISTANCES:
        got = frame_distances(a, b, distance)
        want = [[local_distance(u, v, distance) for v in b] for u in a]
        assert np.allclose(got, want, atol=1e-12)


def test_cosine_zero_vectors():
    d = frame_distances(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 0.0]]), "cosine")
    assert d.tolist() == [[0.0], [1.0]]


def test_dtw_errors():
    with pytest.raises(ValidationError):
        dtw_align(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        dtw_align(np.zeros((2, 2)), np.zeros((2, 2)), "manhattan")
    with pytest.raises(ValidationError):
        dtw_align(-np.ones((2, 2)), np.ones((2, 2)), "symmetric_kl")


def test_dtw_accepts_feature_matrices(rng):
    a = FeatureMatrix(rng.normal(size=(5, 3)))
    path, cost = dtw_align(a, a, "euclidean")
    assert cost == 0.0 and len(path) == 5


# --- Pearson ----------------------------------------------------------------------


def test_pearson_fixtures():
    assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(9 / math.sqrt(84), abs=1e-12)


def test_pearson_errors():
    with pytest.raises(InsufficientDataError):
        pearson([1.0], [2.0])
    with pytest.raises(DegenerateInputError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateInputError):
        pearson([1, 2, 3], [4, 4, 4])
    with pytest.raises(ValidationError):
        pearson([1, 2], [1, 2, 3])


def test_pearson_matches_numpy(rng):
    for _ in range(20):
        x, y = rng.normal(size=30), rng.normal(size=30)
        assert pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine(seed, scale, shift):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=12), rng.normal(size=12)
    r = pearson(x, y)
    assert pearson(scale * x + shift, y) == pytest.approx(r, abs=1e-12)
    assert pearson(-scale * x + shift, y) == pytest.approx(-r, abs=1e-12)


# --- prosody correlation -----------------------------------------------------------


def utterance(rng, n=12, unvoiced=()):
    feats = FeatureMatrix(rng.normal(size=(n, 4)))
    pitch = rng.uniform(80, 300, size=n)
    pitch[list(unvoiced)] = 0.0
    return feats, ProsodyTrack(pitch, rng.uniform(40, 80, size=n))


def test_self_correlation_is_one(rng):
    u = utterance(rng, unvoiced=(0, 5))
    r = prosody_correlation(u, [u])
    assert r.pitch_corr == pytest.approx(1.0, abs=1e-12)
    assert r.intensity_corr == pytest.approx(1.0, abs=1e-12)
    assert (r.n_references, r.n_skipped) == (1, 0)


def test_all_unvoiced_reference(rng):
    test = utterance(rng)
    dead = (test[0], ProsodyTrack(np.zeros(12), np.ones(12)))
    with pytest.raises(DegenerateInputError):
        prosody_correlation(test, [dead])
    r = prosody_correlation(test, [dead, test])
    assert (r.n_references, r.n_skipped) == (1, 1)


def test_two_reference_average():
    # identical features keep the DTW path diagonal, so pairs are frame-aligned
    feats = FeatureMatrix(np.eye(5))
    test = ProsodyTrack(np.array([100.0, 120, 0, 150, 110]), np.array([50.0, 55, 60, 52, 58]))
    ref1 = ProsodyTrack(np.array([105.0, 118, 130, 160, 100]), np.array([51.0, 50, 61, 55, 57]))
    ref2 = ProsodyTrack(np.array([200.0, 0, 210, 190, 230]), np.array([45.0, 49, 44, 48, 41]))
    voiced1 = [0, 1, 3, 4]
    voiced2 = [0, 3, 4]
    r1p = np.corrcoef(test.pitch_hz[voiced1], ref1.pitch_hz[voiced1])[0, 1]
    r2p = np.corrcoef(test.pitch_hz[voiced2], ref2.pitch_hz[voiced2])[0, 1]
    r1i = np.corrcoef(test.intensity_db[voiced1], ref1.intensity_db[voiced1])[0, 1]
    r2i = np.corrcoef(test.intensity_db[voiced2], ref2.intensity_db[voiced2])[0, 1]
    r = prosody_correlation((feats, test), [(feats, ref1), (feats, ref2)], "euclidean")
    assert r.pitch_corr == pytest.approx((r1p + r2p) / 2, abs=1e-12)
    assert r.intensity_corr == pytest.approx((r1i + r2i) / 2, abs=1e-12)


def test_prosody_frame_count_mismatch(rng):
    feats, pros = utterance(rng, n=6)
    with pytest.raises(ValidationError):
        prosody_correlation((FeatureMatrix(np.zeros((7, 4))), pros), [(feats, pros)])


# --- durations -------------------------------------------------------------------------


def align(labels, durs, sil_first=False):
    spans, t = [], 0
    if sil_first:
        spans.append(Span("sil", 0, 3))
        t = 3
    for lab, d in zip(labels, durs):
        spans.append(Span(lab, t, t + d))
        t += d
    return PhonemeAlignment(tuple(spans))


def test_duration_self_correlation():
    a = align(["AE", "T", "IH"], [10, 5, 8])
    assert duration_correlation(a, a) == pytest.approx(1.0)


def test_duration_label_mismatch():
    with pytest.raises(LabelMismatchError):
        duration_correlation(align(["AE", "T"], [3, 4]), align(["AE", "D"], [3, 4]))


def test_duration_too_few_phonemes():
    with pytest.raises(InsufficientDataError):
        duration_correlation(align(["AE"], [3]), align(["AE"], [4]))


def test_duration_fixture_ignores_silence():
    # means 23/3 and 7; sum of products 11; sqrt(114/9) * sqrt(14) in the denominator
    expected = 11 / math.sqrt(114 / 9 * 14)
    assert expected == pytest.approx(0.8260, abs=1e-4)
    got = duration_correlation(align(["AE", "T", "IH"], [10, 5, 8], sil_first=True), align(["AE", "T", "IH"], [8, 4, 9]))
    assert got == pytest.approx(expected, abs=1e-12)


# --- vowel ratio ------------------------------------------------------------------------


def vowel_corpus():
    spans = [
        Span("sil", 0, 4),
        Span("AE", 4, 14, "stressed", True, True),
        Span("T", 14, 20),
        Span("AH", 20, 25, "unstressed", True, True),
        Span("IY", 25, 37, "stressed", True, True),
        Span("ER", 37, 44, "unstressed", True, True),
        Span("sp", 44, 90),
    ]
    return [PhonemeAlignment(tuple(spans))]


def test_vowel_ratio_fixture():
    v = vowel_duration_ratio(vowel_corpus(), 10.0)
    assert v.stressed_ms == pytest.approx(110.0, abs=1e-9)
    assert v.unstressed_ms == pytest.approx(60.0, abs=1e-9)
    assert v.ratio == pytest.approx(110 / 60, abs=1e-9)


def test_vowel_ratio_isochrony():
    a = PhonemeAlignment((Span("AA", 0, 6, "stressed", True), Span("AH", 6, 12, "unstressed", True)))
    assert vowel_duration_ratio([a], 20.0).ratio == 1.0


def test_vowel_ratio_missing_class():
    a = PhonemeAlignment((Span("AA", 0, 6, "stressed", True),))
    with pytest.raises(InsufficientDataError):
        vowel_duration_ratio([a], 20.0)


def test_vowel_ratio_split_and_reorder_invariant():
    spans = vowel_corpus()[0].spans
    whole = vowel_duration_ratio(vowel_corpus(), 10.0)
    parts = [PhonemeAlignment(spans[4:]), PhonemeAlignment(spans[:4])]
    split = vowel_duration_ratio(parts, 10.0)
    assert (split.stressed_ms, split.unstressed_ms, split.ratio) == (whole.stressed_ms, whole.unstressed_ms, whole.ratio)
