import numpy as np
import pytest

from maxent_expr.data_model import Topology, Tune, Voice
from maxent_expr.model_core import ModelParams
from maxent_expr.synthetic import sample_corpus, swing_params, toy_params


def mixed_topology(Q=3, k_hor=2, k_diag=1, n_cont=2):
    voices = (Voice("slot", Q=Q),) + tuple(Voice(f"c{i}") for i in range(n_cont))
    return Topology(voices, k_hor=k_hor, k_diag=k_diag)


def random_params(topology, rng, scale=0.3, a_range=(1.0, 3.0)):
    """Random fields and couplings; self-coefficients large enough to stay well-posed."""
    theta = scale * rng.standard_normal(ModelParams(topology).layout.size)
    for i in ModelParams(topology).layout.a_indices().values():
        theta[i] = rng.uniform(*a_range)
    return ModelParams(topology, theta)


def random_state(topology, N, rng):
    vals = np.empty((topology.n_voices, N))
    for v, voice in enumerate(topology.voices):
        vals[v] = rng.integers(0, voice.Q, N) if voice.discrete else rng.standard_normal(N)
    return vals


def random_tune(topology, N, rng, tune_id="t"):
    return Tune(tune_id, 4.0, random_state(topology, N, rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_corpus():
    """About 50k windows drawn from the known toy model."""
    return sample_corpus(toy_params(), 5, 10002, seed=7, sweeps=20)


@pytest.fixture(scope="session")
def swing_corpus():
    """About 50k windows drawn from the rhythm-structured four-voice model."""
    return sample_corpus(swing_params(), 5, 10006, seed=1, sweeps=20)


@pytest.fixture(scope="session")
def swing_fit(swing_corpus):
    from maxent_expr.training import fit

    return fit(swing_corpus)[0]


# -- acceptance reporting ---------------------------------------------------------

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    if number in _criteria:
        prev_status, _, prev_detail = _criteria[number]
        status = "FAIL" if "FAIL" in (prev_status, status) else "PASS"
        detail = "; ".join(d for d in (prev_detail, detail) if d)
    _criteria[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
