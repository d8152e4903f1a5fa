import math

import numpy as np
import pytest
from scipy import stats

from loopforge import B, P, T
from loopforge import detector as det
from loopforge.detector import (
    CorrMatrix,
    SvddModel,
    SvddTrainConfig,
    calibrate_threshold,
    extract_loops,
    loop_score,
    loop_scores,
    midi_correlation,
    rejection_filter,
    rejection_threshold,
    synthetic_matrix_set,
    train_svdd,
)
from loopforge.pianoroll import Corpus, PianorollPhrase
from loopforge.synth import phrase_corpus, random_phrase
from loopforge.util import rng_for


def phrase_from_bars(bars):
    return PianorollPhrase(np.concatenate(bars, axis=0))


def test_identical_bars_give_unit_correlation():
    bar = (rng_for(0, "corr", 0).uniform(size=(T, P)) < 0.3).astype(np.uint8)
    m = midi_correlation(phrase_from_bars([bar] * B))
    np.testing.assert_allclose(m.values, 1.0)


def test_complement_bars_give_minus_one():
    bar = (rng_for(0, "corr", 1).uniform(size=(T, P)) < 0.5).astype(np.uint8)
    bars = [bar, 1 - bar] + [bar] * 6
    m = midi_correlation(phrase_from_bars(bars))
    assert m.values[0, 1] == -1.0
    assert m.values[1, 0] == -1.0


def test_ten_percent_difference_gives_point_eight():
    bar = np.zeros((T, P), dtype=np.uint8)
    other = bar.copy()
    cells = T * P  # 912
    assert cells == 912
    k = 91  # closest integer count to 10% of 912
    other.reshape(-1)[:k] = 1
    m = midi_correlation(phrase_from_bars([bar, other] + [bar] * 6))
    np.testing.assert_allclose(m.values[0, 1], 1.0 - 2.0 * k / cells, atol=1e-15)
    np.testing.assert_allclose(m.values[0, 1], 0.8, atol=5e-4)


def test_correlation_invariants_on_random_phrases():
    for i in range(300):
        m = midi_correlation(random_phrase(rng_for(1, "corr-inv", i)))
        v = m.values
        np.testing.assert_array_equal(v, v.T)
        np.testing.assert_allclose(np.diag(v), 1.0)
        assert v.min() >= -1.0 and v.max() <= 1.0
        np.testing.assert_array_equal(m.vec, v[np.triu_indices(B, k=1)])
        assert m.vec.shape == (28,)


def test_vec_order_row_major():
    m = np.eye(B)
    counter = 0.0
    for i in range(B):
        for j in range(i + 1, B):
            counter += 0.01
            m[i, j] = m[j, i] = counter
    vec = CorrMatrix(m).vec
    np.testing.assert_allclose(np.diff(vec), 0.01)


# ---------------------------------------------------------------------------
# threshold arithmetic

def test_calibrate_hand_values():
    tau, mean, std = calibrate_threshold(np.exp([-2.0, -1.0, 0.0]))
    assert mean == pytest.approx(-1.0)
    assert std == pytest.approx(1.0)
    assert tau == pytest.approx(1.0)


def test_calibrate_equal_scores():
    tau, _, std = calibrate_threshold(np.array([0.42, 0.42, 0.42]))
    assert std == pytest.approx(0.0)
    assert tau == pytest.approx(0.42)


def test_calibrate_two_scores():
    tau, _, _ = calibrate_threshold(np.exp([1.0, 3.0]))
    assert tau == pytest.approx(math.exp(2.0 + math.sqrt(2.0)))


def test_calibrate_floors_zero_scores():
    tau, mean, _ = calibrate_threshold(np.array([0.0, 1e-6]))
    assert math.isfinite(tau) and mean == pytest.approx((math.log(1e-12) + math.log(1e-6)) / 2)


def test_calibrate_needs_two():
    with pytest.raises(ValueError):
        calibrate_threshold(np.array([1.0]))


# ---------------------------------------------------------------------------
# scoring

def random_model(seed=0):
    rng = rng_for(seed, "svdd-test")
    dims = (28, 64, 32, 16)
    weights = [rng.normal(0, 0.3, size=(dims[i], dims[i + 1])) for i in range(3)]
    return SvddModel(weights=weights, center=rng.normal(size=16))


def test_score_zero_iff_embedding_equals_center():
    model = random_model()
    x = synthetic_matrix_set(0, 1)[0]
    model.center = model.embed(x.vec[None, :])[0].copy()
    assert loop_score(model, x) == 0.0
    model.center = model.center + 1.0
    assert loop_score(model, x) > 0.0


def test_score_pure_and_nonnegative():
    model = random_model()
    mats = synthetic_matrix_set(3, 20) + synthetic_matrix_set(4, 20, kind="random")
    s1 = loop_scores(model, mats)
    s2 = loop_scores(model, mats)
    np.testing.assert_array_equal(s1, s2)
    assert (s1 >= 0.0).all()


def test_mean_score_at_mean_center_is_trace_of_covariance():
    model = random_model(7)
    mats = synthetic_matrix_set(8, 50)
    emb = model.embed(np.stack([m.vec for m in mats]))
    model.center = emb.mean(axis=0)
    mean_score = loop_scores(model, mats).mean()
    trace_cov = np.cov(emb, rowvar=False, ddof=0).trace()
    assert mean_score == pytest.approx(trace_cov, rel=1e-12)


# ---------------------------------------------------------------------------
# training

def test_train_svdd_progress_and_separation():
    train = synthetic_matrix_set(10, 120)
    progress = []
    cfg = SvddTrainConfig(pretrain_epochs=50, epochs=200, seed=1)
    model = train_svdd(train, cfg, progress=progress)
    assert progress[-1] < progress[0]
    assert model.tau > 0
    # held-out two-class check, small scale
    loops = synthetic_matrix_set(11, 40)
    rand = synthetic_matrix_set(12, 40, kind="random")
    assert loop_scores(model, loops).mean() < loop_scores(model, rand).mean()


def test_train_svdd_warns_on_identical_inputs():
    mats = [synthetic_matrix_set(13, 1)[0]] * 4
    with pytest.warns(det.HypersphereCollapseWarning):
        train_svdd(mats, SvddTrainConfig(pretrain_epochs=2, epochs=2))


def test_center_guard_keeps_components_off_zero():
    train = synthetic_matrix_set(14, 30)
    model = train_svdd(train, SvddTrainConfig(pretrain_epochs=5, epochs=5, seed=3))
    assert np.abs(model.center).min() >= det.CENTER_GUARD - 1e-12


def test_train_needs_two_matrices():
    with pytest.raises(ValueError):
        train_svdd(synthetic_matrix_set(0, 1))


# ---------------------------------------------------------------------------
# extraction and rejection

def scored_corpus_and_model():
    model = random_model(20)
    corpus = phrase_corpus(21, 30, kind="loop")
    extra = phrase_corpus(22, 30, kind="random")
    merged = Corpus(corpus.phrases + extra.phrases, corpus.provenance + extra.provenance)
    model.train_scores = det.score_corpus(model, corpus)
    model.tau, model.train_mean_log, model.train_std_log = calibrate_threshold(model.train_scores)
    return merged, model


def test_extract_empty_corpus():
    _, model = scored_corpus_and_model()
    out = extract_loops(Corpus([], []), model)
    assert len(out) == 0


def test_extract_keeps_only_below_tau_and_preserves_order():
    corpus, model = scored_corpus_and_model()
    out = extract_loops(corpus, model)
    scores = det.score_corpus(model, out)
    assert (scores <= model.tau).all()
    kept = {id(p) for p in out.phrases}
    ordered = [p for p in corpus.phrases if id(p) in kept]
    assert [id(p) for p in out.phrases] == [id(p) for p in ordered]
    assert all(prov in corpus.provenance for prov in out.provenance)


def test_rejection_none_is_identity():
    corpus, model = scored_corpus_and_model()
    out = rejection_filter(corpus, model, None)
    assert out is corpus


def test_rejection_rate_one_keeps_below_max():
    corpus, model = scored_corpus_and_model()
    scores = det.score_corpus(model, corpus)
    out = rejection_filter(corpus, model, 1.0)
    expected = int((scores <= model.train_scores.max()).sum())
    assert len(out) == expected


def test_rejection_quantile_interpolation():
    model = random_model(1)
    model.train_scores = np.arange(1.0, 101.0)
    assert rejection_threshold(model, 0.1) == pytest.approx(10.9)


def test_rejection_keeps_only_below_quantile():
    model = random_model(2)
    model.train_scores = np.arange(1.0, 101.0)
    # build a tiny corpus, then monkeypatch scores deterministically
    corpus = phrase_corpus(30, 2, kind="random")
    scores = det.score_corpus(model, corpus)
    thr = rejection_threshold(model, 0.1)
    out = rejection_filter(corpus, model, 0.1)
    assert len(out) == int((scores <= thr).sum())


def test_rejection_monotone_and_nested():
    corpus, model = scored_corpus_and_model()
    rates = [None, 1.0, 0.5, 0.1, 0.02]
    kept_sets = []
    means = []
    for rate in rates:
        out = rejection_filter(corpus, model, rate)
        ids = {id(p) for p in out.phrases}
        kept_sets.append(ids)
        if ids:
            means.append(det.score_corpus(model, out).mean())
    for bigger, smaller in zip(kept_sets, kept_sets[1:]):
        assert smaller <= bigger
    assert all(a >= b - 1e-12 for a, b in zip(means, means[1:]))


def test_permutation_equivariance():
    corpus, model = scored_corpus_and_model()
    perm = rng_for(5, "perm").permutation(len(corpus))
    shuffled = corpus.subset(perm)
    out_direct = extract_loops(shuffled, model)
    out_orig = extract_loops(corpus, model)
    kept_orig = {id(p) for p in out_orig.phrases}
    assert [id(p) for p in out_direct.phrases] == \
        [id(corpus.phrases[i]) for i in perm if id(corpus.phrases[i]) in kept_orig]


# ---------------------------------------------------------------------------
# two-class separation, desk scale

def test_synthetic_two_class_separation_small():
    train = synthetic_matrix_set(40, 150)
    model = train_svdd(train, SvddTrainConfig(pretrain_epochs=40, epochs=250, seed=4))
    loops = loop_scores(model, synthetic_matrix_set(41, 60))
    rand = loop_scores(model, synthetic_matrix_set(42, 60, kind="random"))
    t, p = stats.ttest_ind(loops, rand, equal_var=False)
    assert loops.mean() < rand.mean()
    assert p < 1e-3


# ---------------------------------------------------------------------------
# .cor container

def test_matrix_file_roundtrip(tmp_path):
    mats = synthetic_matrix_set(50, 5)
    path = tmp_path / "m.cor"
    det.save_matrices(path, mats)
    back = det.load_matrices(path)
    assert len(back) == 5
    for a, b in zip(mats, back):
        np.testing.assert_allclose(a.vec, b.vec, atol=1e-7)  # fp32 storage
    blob = path.read_bytes()
    assert blob[:4] == b"CORR"
    assert int.from_bytes(blob[4:8], "little") == 5
    assert int.from_bytes(blob[8:10], "little") == B
    assert len(blob) == 10 + 5 * 28 * 4


def test_model_checkpoint_roundtrip(tmp_path):
    corpus, model = scored_corpus_and_model()
    path = tmp_path / "svdd.lckp"
    model.save(path)
    back = SvddModel.load(path)
    assert back.tau == pytest.approx(model.tau, rel=1e-6)
    x = synthetic_matrix_set(60, 3)
    np.testing.assert_allclose(loop_scores(back, x), loop_scores(model, x), rtol=1e-4)
