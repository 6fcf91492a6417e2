"""Sequence generation by random-site heat-bath updates.

Each step picks an unclamped site uniformly at random and redraws it from its
exact conditional given the current neighbors (softmax for discrete voices,
Gaussian for continuous ones). Sites near the sequence ends simply lack the
out-of-range neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .data_model import Tune, extract_windows
from .errors import ValidationError
from .model_core import (
    ModelParams,
    conditional_continuous,
    conditional_discrete,
    gather_neighborhood,
)
from .observables import ObservableVector, observable_distance, observable_vector
from .training import negative_pseudo_loglik

_CHUNK = 4096


@dataclass(frozen=True)
class GenerationConfig:
    length: int = 10000
    sweeps_factor: float = 10.0
    seed: int = 0
    clamps: Mapping[int, np.ndarray] = field(default_factory=dict)
    monitor_stride: int | None = None

    def __post_init__(self):
        if int(self.length) != self.length or self.length < 1:
            raise ValidationError(f"length must be a positive integer, got {self.length}")
        if not self.sweeps_factor > 0:
            raise ValidationError("sweeps_factor must be > 0")
        if self.monitor_stride is not None and self.monitor_stride < 1:
            raise ValidationError("monitor_stride must be >= 1")
        object.__setattr__(
            self, "clamps", {int(v): np.array(c, dtype=float) for v, c in dict(self.clamps).items()}
        )
        for v, c in self.clamps.items():
            if c.shape != (self.length,):
                raise ValidationError(f"clamp for voice {v} has length {c.size}, sequence length is {self.length}")


@dataclass
class MonitorTrace:
    iterations: list[int] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)
    distance: list[float] = field(default_factory=list)

    def append(self, it: int, nll: float, dist: float) -> None:
        if self.iterations and it <= self.iterations[-1]:
            raise ValueError("monitor checkpoints must be strictly increasing")
        self.iterations.append(it)
        self.nll.append(nll)
        self.distance.append(dist)

    def to_csv(self) -> str:
        lines = ["iteration,nll,distance"]
        lines += [f"{i},{n!r},{d!r}" for i, n, d in zip(self.iterations, self.nll, self.distance)]
        return "\n".join(lines) + "\n"


def _check_clamp(params: ModelParams, v: int, values: np.ndarray) -> None:
    if not 0 <= v < params.topology.n_voices:
        raise ValidationError(f"clamp names voice {v}, model has {params.topology.n_voices}")
    voice = params.topology.voices[v]
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"clamp for voice {v} has non-finite values")
    if voice.discrete and (np.any(values != np.round(values)) or values.min() < 0 or values.max() >= voice.Q):
        raise ValidationError(f"clamp for voice {v} needs integer categories in [0, {voice.Q})")


def resample_site(
    state: np.ndarray, v: int, n: int, params: ModelParams, rng: np.random.Generator, clamped: np.ndarray | None = None
) -> float:
    """Draw a new value for site (v, n) from its conditional; ``state`` is not modified."""
    if clamped is not None and clamped[v, n]:
        raise ValidationError(f"site ({v}, {n}) is clamped")
    nb = gather_neighborhood(state, v, n, params.topology, params.layout)
    if params.topology.voices[v].discrete:
        p = conditional_discrete(nb, params)
        return float(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))
    mu, var = conditional_continuous(nb, params)
    return mu + math.sqrt(var) * rng.standard_normal()


class Chain:
    """A single Markov chain over a ``(V, N)`` sequence."""

    def __init__(self, params: ModelParams, length: int, seed: int = 0, clamps: Mapping[int, np.ndarray] | None = None, init: np.ndarray | None = None):
        self.params = params
        topo = params.topology
        self.rng = np.random.default_rng(seed)
        self.length = length
        self.clamped = np.zeros((topo.n_voices, length), dtype=bool)
        state = np.empty((topo.n_voices, length))
        for v, voice in enumerate(topo.voices):
            if voice.discrete:
                state[v] = self.rng.integers(0, voice.Q, size=length)
            else:
                a, h = params.self_coefficient(v), params.field(v)
                state[v] = -h / (2 * a) + math.sqrt(1 / (2 * a)) * self.rng.standard_normal(length)
        if init is not None:
            state[:] = init
        for v, values in (clamps or {}).items():
            values = np.asarray(values, dtype=float)
            _check_clamp(params, v, values)
            state[v] = values
            self.clamped[v] = True
        self.state = state
        self.free_sites = np.flatnonzero(~self.clamped.ravel())
        if self.free_sites.size == 0:
            raise ValidationError("every site is clamped; nothing to sample")
        self.updates = 0

    @property
    def n_free(self) -> int:
        return int(self.free_sites.size)

    def run(self, n_updates: int, callback: Callable[["Chain"], None] | None = None, every: int = 1) -> None:
        """Perform ``n_updates`` single-site updates, calling ``callback`` every ``every`` updates."""
        params = self.params
        topo = params.topology
        layout = params.layout
        state = self.state
        N = self.length
        kinds = [voice.discrete for voice in topo.voices]
        rng = self.rng
        done = 0
        while done < n_updates:
            chunk = min(_CHUNK, n_updates - done)
            sites = self.free_sites[rng.integers(0, self.free_sites.size, size=chunk)]
            us = rng.random(chunk)
            gs = rng.standard_normal(chunk)
            for i in range(chunk):
                v, n = divmod(int(sites[i]), N)
                nb = gather_neighborhood(state, v, n, topo, layout)
                if kinds[v]:
                    p = conditional_discrete(nb, params)
                    state[v, n] = min(int(np.searchsorted(np.cumsum(p), us[i], side="right")), p.size - 1)
                else:
                    mu, var = conditional_continuous(nb, params)
                    state[v, n] = mu + math.sqrt(var) * gs[i]
                self.updates += 1
                if callback is not None and self.updates % every == 0:
                    callback(self)
            done += chunk


def monitor_state(state: np.ndarray, params: ModelParams, reference: ObservableVector | None) -> tuple[float, float]:
    """Pseudo-likelihood of the sequence's interior windows and its observable distance to ``reference``."""
    topo = params.topology
    tune = Tune("state", 1.0, state)
    windows = extract_windows(tune, topo)
    nll = negative_pseudo_loglik(params, windows)[0] if len(windows) else math.nan
    dist = math.nan
    if reference is not None:
        dist = observable_distance(observable_vector(state, topo), reference)
    return nll, dist


def generate(
    params: ModelParams, config: GenerationConfig, reference: ObservableVector | None = None
) -> tuple[np.ndarray, MonitorTrace]:
    """Sample a ``(V, length)`` sequence.

    The chain runs ``sweeps_factor`` updates per free variable. When a
    reference observable vector is given, the monitor is evaluated at the
    start and every ``monitor_stride`` updates (default: the sequence length).
    """
    chain = Chain(params, config.length, config.seed, config.clamps)
    total = int(round(config.sweeps_factor * chain.n_free))
    trace = MonitorTrace()
    if reference is None:
        chain.run(total)
        return chain.state.copy(), trace
    stride = config.monitor_stride or config.length
    trace.append(0, *monitor_state(chain.state, params, reference))
    chain.run(total, lambda c: trace.append(c.updates, *monitor_state(c.state, params, reference)), every=stride)
    if trace.iterations[-1] != chain.updates:
        trace.append(chain.updates, *monitor_state(chain.state, params, reference))
    return chain.state.copy(), trace


def random_baseline(params: ModelParams, config: GenerationConfig) -> np.ndarray:
    """Independent per-voice draws from the corpus marginals stored with the model.

    Continuous voices are Gaussian with the corpus mean and standard deviation;
    unclamped discrete voices follow the corpus category frequencies.
    """
    stats = params.metadata.get("corpus_stats")
    if not stats:
        raise ValidationError("model carries no corpus statistics for the random baseline")
    rng = np.random.default_rng(config.seed)
    topo = params.topology
    out = np.empty((topo.n_voices, config.length))
    for v, voice in enumerate(topo.voices):
        if v in config.clamps:
            _check_clamp(params, v, config.clamps[v])
            out[v] = config.clamps[v]
        elif voice.discrete:
            out[v] = rng.choice(voice.Q, size=config.length, p=np.asarray(stats[f"v{v}"]["freq"]))
        else:
            s = stats[f"v{v}"]
            out[v] = s["mean"] + s["sd"] * rng.standard_normal(config.length)
    return out
