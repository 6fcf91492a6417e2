"""Known in-family models and corpora sampled from them.

Used for self-consistency experiments (parameter recovery, frequency scatter,
cross-validation) where the recorded performance corpus is not available.
"""

from __future__ import annotations

import numpy as np

from .data_model import Corpus, Topology, Tune, Voice
from .model_core import ModelParams
from .sampler import Chain


def toy_topology(Q: int = 2) -> Topology:
    """One discrete and one continuous voice with nearest-neighbor ranges."""
    return Topology((Voice("slot", Q=Q), Voice("dev")), k_hor=1, k_diag=1)


def toy_params() -> ModelParams:
    topo = toy_topology(2)
    return ModelParams.from_blocks(
        topo,
        {
            "h:v0": [0.2, -0.2],
            "h:v1": 0.1,
            "a:v1": 0.5,
            "hor:v0:k1": [[0.4, -0.4], [-0.4, 0.4]],
            "hor:v1:k1": 0.3,
            "vert:v0:v1": [0.5, -0.5],
            "diag:v0:v1:k1": [-0.3, 0.3],
            "diag:v1:v0:k1": [0.25, -0.25],
        },
        {"style": "toy"},
    )


def swing_topology(Q: int = 8, k_hor: int = 3, k_diag: int = 1) -> Topology:
    return Topology(
        (Voice("slot", Q=Q), Voice("onset"), Voice("duration"), Voice("loudness")),
        k_hor=k_hor,
        k_diag=k_diag,
    )


def swing_params(Q: int = 8) -> ModelParams:
    """A rhythm-structured model: slots tend to advance by one or two grid steps,
    odd slots are delayed and louder, durations follow slot parity."""
    topo = swing_topology(Q)
    step = (np.arange(Q)[None, :] - np.arange(Q)[:, None]) % Q
    hor1 = np.where(np.isin(step, (1, 2)), -1.2, 0.4)
    hor2 = np.where(np.isin(step, (2, 3, 4)), -0.4, 0.1)
    parity = np.where(np.arange(Q) % 2 == 1, 1.0, -1.0)
    blocks = {
        "h:v0": np.zeros(Q),
        "h:v1": 0.0,
        "h:v2": 0.0,
        "h:v3": -2.0,
        "a:v1": 4.0,
        "a:v2": 3.0,
        "a:v3": 2.0,
        "hor:v0:k1": hor1,
        "hor:v0:k2": hor2,
        "hor:v1:k1": -1.0,
        "hor:v2:k1": -0.6,
        "hor:v3:k1": -0.8,
        "hor:v3:k2": -0.3,
        "vert:v0:v1": -1.2 * parity,
        "vert:v0:v2": 0.8 * parity,
        "vert:v0:v3": -0.6 * parity,
        "vert:v1:v2": 0.6,
        "vert:v1:v3": -0.5,
        "diag:v0:v1:k1": 0.3 * parity,
        "diag:v1:v0:k1": 0.0 * parity,
        "diag:v1:v2:k1": 0.3,
    }
    return ModelParams.from_blocks(topo, blocks, {"style": "synthetic-swing"})


def sample_tunes(
    params: ModelParams, n_tunes: int, length: int, seed: int = 0, sweeps: float = 20.0, prefix: str = "t"
) -> list[Tune]:
    tunes = []
    for i in range(n_tunes):
        chain = Chain(params, length, seed=seed * 100003 + i)
        chain.run(int(sweeps * chain.n_free))
        tunes.append(Tune(f"{prefix}{i:03d}", 4.0, chain.state))
    return tunes


def sample_corpus(
    params: ModelParams, n_tunes: int, length: int, seed: int = 0, sweeps: float = 20.0, style: str | None = None
) -> Corpus:
    tunes = sample_tunes(params, n_tunes, length, seed, sweeps)
    return Corpus(style or params.metadata.get("style", "synthetic"), tuple(tunes), params.topology)


def noise_corpus(topology: Topology, n_tunes: int, length: int, seed: int = 0) -> Corpus:
    """Independent uniform categories and standard-normal continuous values."""
    rng = np.random.default_rng(seed)
    tunes = []
    for i in range(n_tunes):
        vals = np.empty((topology.n_voices, length))
        for v, voice in enumerate(topology.voices):
            vals[v] = rng.integers(0, voice.Q, length) if voice.discrete else rng.standard_normal(length)
        tunes.append(Tune(f"n{i:03d}", 4.0, vals))
    return Corpus("noise", tuple(tunes), topology)
