import math

import numpy as np
import pytest

from maxent_expr.data_model import Corpus, Topology, Tune, Voice, extract_windows
from maxent_expr.errors import ShortTuneWarning, ValidationError
from maxent_expr.evaluation import agreement, fold_seed, frequency_scatter, loocv, predict_site, r2
from maxent_expr.model_core import ModelParams
from maxent_expr.observables import ObservableVector
from maxent_expr.synthetic import noise_corpus, sample_corpus, toy_params
from maxent_expr.training import TrainConfig

from conftest import mixed_topology, random_params, random_tune


def test_r2_hand_example():
    assert r2([0, 1, 1], [0, 1, 2], 1.0) == pytest.approx(0.5)


def test_r2_perfect_and_baseline():
    y = np.array([0.3, -1.0, 2.0])
    assert r2(y, y, 0.0) == 1.0
    assert r2(np.full(3, 0.5), y, 0.5) <= 1.0
    assert r2(np.full(3, y.mean()), y, y.mean()) == 0.0


def test_r2_can_be_negative():
    assert r2([5, 5, 5], [0, 1, 2], 1.0) < 0


def test_r2_undefined_for_constant_actuals():
    assert math.isnan(r2([1, 2], [1, 1], 1.0))


def test_r2_rejects_bad_lengths():
    with pytest.raises(ValidationError):
        r2([1], [1, 2], 0.0)
    with pytest.raises(ValidationError):
        r2([], [], 0.0)


def test_zero_coupling_prediction_is_constant(rng):
    topo = mixed_topology(Q=2)
    params = ModelParams.from_blocks(topo, {"h:v1": 0.6, "a:v1": 1.5})
    ws = extract_windows(random_tune(topo, 30, rng), topo)
    preds = {predict_site(params, w, 1) for w in ws}
    assert preds == {-0.6 / 3.0}


def test_prediction_ignores_non_neighbors(rng):
    topo = mixed_topology(Q=2, k_hor=1, k_diag=1)
    params = random_params(topo, rng)
    ws = extract_windows(random_tune(topo, 20, rng), topo)
    w = ws[3]
    vals = np.array(w.values)
    vals[1, 1] = 99.0  # the center of voice 1 itself is not its own neighbor
    from maxent_expr.data_model import Window

    assert predict_site(params, Window(vals, w.tune_id, w.center), 1) == predict_site(params, w, 1)


def test_prediction_rejects_discrete_voice(rng):
    topo = mixed_topology()
    ws = extract_windows(random_tune(topo, 10, rng), topo)
    with pytest.raises(ValidationError):
        predict_site(ModelParams(topo), ws[0], 0)


def test_true_model_residuals_centered():
    params = toy_params()
    corpus = sample_corpus(params, 1, 4002, seed=3, sweeps=10)
    ws = extract_windows(corpus.tunes[0], params.topology)
    resid = [w.at(1, 0) - predict_site(params, w, 1) for w in ws]
    assert abs(np.mean(resid)) < 4 * math.sqrt(1 / (2 * 0.5) / len(resid))


def test_loocv_needs_two_tunes(rng):
    topo = mixed_topology()
    with pytest.raises(ValidationError):
        loocv(Corpus("x", (random_tune(topo, 20, rng),), topo))


def test_loocv_skips_fold_without_windows(rng):
    topo = mixed_topology(k_hor=2)
    tunes = (random_tune(topo, 60, rng, "a"), random_tune(topo, 60, rng, "b"), random_tune(topo, 3, rng, "c"))
    with pytest.warns(ShortTuneWarning):
        report = loocv(Corpus("x", tunes, topo))
    assert report.skipped_folds == ["c"]
    assert set(report.window_counts) == {"a", "b"}


def test_loocv_noise_is_near_zero():
    topo = Topology((Voice("slot", Q=4), Voice("a"), Voice("b")), k_hor=2, k_diag=1)
    report = loocv(noise_corpus(topo, 3, 1500, seed=2))
    for name in ("a", "b"):
        assert abs(report.pooled_r2[name]) < 0.05
    assert "negative" in report.table() or all(r >= 0 for r in report.pooled_r2.values())


def test_loocv_structured_is_positive():
    corpus = sample_corpus(toy_params(), 3, 1502, seed=4, sweeps=10)
    report = loocv(corpus, config=TrainConfig())
    assert report.pooled_r2["dev"] > 0
    assert report.window_counts == {t.id: 1500 for t in corpus.tunes}
    assert 0 <= report.discrete_accuracy["slot"] <= 1
    assert set(report.to_dict()) >= {"pooled_r2", "per_tune_r2", "window_counts"}


def test_loocv_independent_of_tune_order():
    corpus = sample_corpus(toy_params(), 3, 400, seed=5, sweeps=5)
    rev = Corpus(corpus.style, tuple(reversed(corpus.tunes)), corpus.topology)
    assert loocv(corpus).to_dict() == loocv(rev).to_dict()


def test_fold_seed_is_stable():
    assert fold_seed("tune-1") == fold_seed("tune-1")
    assert fold_seed("tune-1") != fold_seed("tune-2")


def test_agreement_uses_frequency_entries_above_threshold():
    labels = ("mean:v1", "freq:v0:0", "freq:v0:1", "hor.dd:v0:k1:0:0", "hor.dd:v0:k1:0:1")
    c = ObservableVector(labels, [5.0, 0.6, 0.4, 0.005, 0.3], [1] * 5)
    m = ObservableVector(labels, [-5.0, 0.55, 0.45, 0.9, 0.32], [1] * 5)
    r, n = agreement(c, m, 1e-2)
    assert n == 3
    assert r == pytest.approx(np.corrcoef([0.6, 0.4, 0.3], [0.55, 0.45, 0.32])[0, 1])


def test_frequency_scatter_on_true_model():
    params = toy_params()
    corpus = sample_corpus(params, 1, 3000, seed=8, sweeps=10)
    res = frequency_scatter(params, corpus, gen_length=3000, seed=9, sweeps_factor=10)
    assert res.pearson_r > 0.95
    assert res.n_points >= 4
    assert any(row[0].startswith("bin:") for row in res.bins)
    assert res.summary()["distance_metric"] == "rms"


def test_frequency_scatter_rejects_other_voices(rng):
    topo = mixed_topology()
    corpus = Corpus("x", (Tune("t", 4.0, np.zeros((3, 10))),), topo)
    with pytest.raises(ValidationError):
        frequency_scatter(toy_params(), corpus, 100)
