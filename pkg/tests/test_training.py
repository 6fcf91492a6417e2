import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from maxent_expr.data_model import Corpus, Topology, Tune, Voice, corpus_windows, extract_windows
from maxent_expr.errors import FloorWarning, NumericalError, ValidationError
from maxent_expr.model_core import ModelParams, serialize
from maxent_expr.training import (
    TrainConfig,
    conditional_moments,
    conditional_probabilities,
    fit,
    fit_windows,
    gradient,
    initial_params,
    loss_and_gradient,
    negative_pseudo_loglik,
)

from conftest import mixed_topology, random_params, random_state, random_tune
from oracles import central_differences, reference_loss


def windows_of(topo, N, rng, n_tunes=1):
    return corpus_windows(Corpus("x", tuple(random_tune(topo, N, rng, f"t{i}") for i in range(n_tunes)), topo))


def test_uniform_discrete_loss(rng):
    topo = Topology((Voice("x", Q=4), Voice("z", Q=4)), k_hor=2, k_diag=1)
    loss, per_voice = negative_pseudo_loglik(ModelParams(topo), windows_of(topo, 30, rng))
    assert_allclose(per_voice, [math.log(4)] * 2, rtol=1e-14)
    assert loss == pytest.approx(2 * math.log(4))


def test_standard_normal_at_mode():
    topo = Topology((Voice("y"),), 1, 1)
    ws = extract_windows(Tune("t", 1.0, np.zeros((1, 5))), topo)
    loss, _ = negative_pseudo_loglik(ModelParams(topo), ws)
    assert loss == pytest.approx(0.5 * math.log(2 * math.pi), rel=1e-15)


@pytest.mark.parametrize("seed", range(6))
def test_loss_matches_quadrature_oracle(seed):
    rng = np.random.default_rng(seed)
    topo = mixed_topology(Q=int(rng.choice([2, 3])), k_hor=int(rng.integers(1, 4)), k_diag=int(rng.integers(1, 3)))
    params = random_params(topo, rng, scale=0.4)
    ws = windows_of(topo, 2 * topo.half_width + 8, rng)
    l2 = float(rng.uniform(0, 0.1))
    assert abs(negative_pseudo_loglik(params, ws, l2)[0] - reference_loss(params, ws, l2)) <= 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    topo = mixed_topology(Q=int(rng.choice([2, 4])), k_hor=int(rng.integers(1, 4)), k_diag=int(rng.integers(1, 3)))
    params = random_params(topo, rng)
    ws = windows_of(topo, 2 * topo.half_width + 12, rng)
    l2 = float(rng.uniform(0, 0.01))
    g = gradient(params, ws, l2)
    fd = central_differences(lambda th: negative_pseudo_loglik(params.with_theta(th), ws, l2)[0], params.theta)
    assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_l2_adds_exactly_twice_lambda_theta(rng):
    topo = mixed_topology(Q=3)
    params = random_params(topo, rng)
    ws = windows_of(topo, 20, rng)
    lam = 0.37
    diff = gradient(params, ws, lam) - gradient(params, ws, 0.0)
    mask = params.layout.regularization_mask()
    assert_allclose(diff[mask], 2 * lam * params.theta[mask], rtol=1e-12, atol=1e-15)
    assert_array_equal(diff[~mask], 0.0)
    # self-coefficients are not regularized
    assert not mask[list(params.layout.a_indices().values())].any()


def test_stationary_at_matching_moments():
    # one discrete voice cycling through all categories and one continuous voice
    # with zero mean and unit variance, uncorrelated with everything
    topo = Topology((Voice("x", Q=2), Voice("y")), k_hor=1, k_diag=1)
    x = np.array([0, 0, 1, 1] * 50, dtype=float)
    y = np.array([1, 1, -1, -1] * 50, dtype=float)
    y = np.roll(y, 1)  # y(n) = +1, +1, -1, -1 shifted so every product averages to zero
    ws = extract_windows(Tune("t", 4.0, np.vstack([x, y])), topo)
    g = gradient(ModelParams(topo), ws)
    assert_allclose(g[ModelParams(topo).layout["h:v0"].slice], 0.0, atol=1e-2)
    assert abs(g[ModelParams(topo).layout["a:v1"].start]) < 1e-12


def test_discrete_field_shift_invariant_without_l2(rng):
    topo = mixed_topology(Q=4)
    params = random_params(topo, rng)
    ws = windows_of(topo, 25, rng)
    th = np.array(params.theta)
    th[params.layout["h:v0"].slice] += 3.0
    assert negative_pseudo_loglik(params.with_theta(th), ws)[0] == pytest.approx(
        negative_pseudo_loglik(params, ws)[0], rel=1e-13
    )


def test_empty_windows_rejected(rng):
    topo = mixed_topology(k_hor=3)
    with pytest.warns(Warning):
        ws = extract_windows(random_tune(topo, 4, rng), topo)
    with pytest.raises(ValidationError):
        negative_pseudo_loglik(ModelParams(topo), ws)


def test_initial_self_coefficient_matches_variance(rng):
    topo = mixed_topology()
    ws = windows_of(topo, 200, rng)
    p = initial_params(topo, ws)
    assert p.self_coefficient(1) == pytest.approx(1 / (2 * np.var(ws.column(1, 0))))
    assert_array_equal(p.field(0), 0.0)


def test_zero_variance_voice_uses_floor():
    topo = Topology((Voice("x", Q=2), Voice("y")), 1, 1)
    vals = np.vstack([np.arange(20) % 2, np.full(20, 0.3)])
    ws = extract_windows(Tune("t", 4.0, vals), topo)
    with pytest.warns(FloorWarning):
        p = initial_params(topo, ws)
    assert p.self_coefficient(1) == pytest.approx(0.5e8)


def _small_corpus(rng):
    topo = mixed_topology(Q=3, k_hor=1, k_diag=1)
    return Corpus("x", tuple(random_tune(topo, 300, rng, f"t{i}") for i in range(2)), topo)


def test_fit_converges_and_loss_decreases(rng):
    corpus = _small_corpus(rng)
    params, report = fit(corpus)
    assert report.converged
    assert np.all(np.diff(report.loss_trace) <= 1e-8)
    assert report.loss == pytest.approx(negative_pseudo_loglik(params, corpus_windows(corpus), 1e-4)[0])
    assert params.metadata["style"] == "x"
    assert params.metadata["windows"] == 2 * 298


def test_fit_reaches_gradient_tolerance(rng):
    corpus = _small_corpus(rng)
    params, report = fit(corpus, config=TrainConfig(loss_rel_tolerance=1e-15))
    g = gradient(params, corpus_windows(corpus), 1e-4)
    assert report.reason == "grad_tolerance"
    assert np.max(np.abs(g)) < 1e-6


def test_rprop_descends_monotonically(rng):
    corpus = _small_corpus(rng)
    _, base = fit(corpus)
    _, report = fit(corpus, config=TrainConfig(method="rprop", max_iterations=400))
    assert np.all(np.diff(report.loss_trace) <= 0)
    assert report.loss == pytest.approx(base.loss, abs=1e-3)


def test_fit_is_bit_identical(rng):
    corpus = _small_corpus(rng)
    a, ra = fit(corpus, config=TrainConfig(seed=4))
    b, rb = fit(corpus, config=TrainConfig(seed=4))
    assert serialize(a) == serialize(b)
    assert ra.loss_trace == rb.loss_trace


def test_fitted_conditionals_match_empirical_moments(toy_corpus):
    params, _ = fit(toy_corpus, config=TrainConfig(l2_strength=0.0))
    ws = corpus_windows(toy_corpus)
    mu, var = conditional_moments(params, ws, 1)
    resid = ws.column(1, 0) - mu
    assert abs(resid.mean()) < 1e-5
    assert np.mean(resid**2) == pytest.approx(var, rel=1e-4)
    p = conditional_probabilities(params, ws, 0)
    freq = np.bincount(ws.column(0, 0).astype(int), minlength=2) / len(ws)
    assert_allclose(p.mean(axis=0), freq, atol=1e-5)


def test_divergence_is_reported():
    topo = Topology((Voice("y"),), 1, 1)
    vals = np.array([[0.0, 1e200, -1e200, 1e200, 0.0, 3.0]])
    with pytest.raises((NumericalError, ValidationError, FloatingPointError)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit(Corpus("x", (Tune("t", 1.0, vals),), topo))


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(l2_strength=-1)
    with pytest.raises(ValidationError):
        TrainConfig(grad_tolerance=0)
    with pytest.raises(ValidationError):
        TrainConfig(method="adam")


def test_trace_csv_header(rng):
    _, report = fit(_small_corpus(rng))
    lines = report.trace_csv().splitlines()
    assert lines[0] == "iteration,loss,grad_norm"
    assert len(lines) == len(report.loss_trace) + 1


def test_loss_and_gradient_agree_with_parts(rng):
    topo = mixed_topology(Q=2)
    params = random_params(topo, rng)
    ws = windows_of(topo, 20, rng)
    loss, g = loss_and_gradient(params, ws, 0.01)
    assert loss == negative_pseudo_loglik(params, ws, 0.01)[0]
    assert_array_equal(g, gradient(params, ws, 0.01))


def test_fit_windows_rejects_empty():
    topo = mixed_topology()
    from maxent_expr.data_model import WindowSet

    with pytest.raises(ValidationError):
        fit_windows(topo, WindowSet.empty(3, 2))


def test_random_state_helper_shape(rng):
    assert random_state(mixed_topology(), 4, rng).shape == (3, 4)
