"""Predictive power and model-vs-corpus frequency agreement."""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data_model import Corpus, Topology, Window, extract_windows
from .errors import ShortTuneWarning, ValidationError
from .model_core import ModelParams, NeighborhoodValues, conditional_continuous, layout_for
from .observables import (
    ObservableVector,
    marginal_bins,
    observable_distance,
    observable_vector,
    scatter_rows,
)
from .sampler import GenerationConfig, generate
from .training import TrainConfig, conditional_moments, conditional_probabilities, fit


def window_neighborhood(window: Window, v: int, topology: Topology) -> NeighborhoodValues:
    vals = {
        (inc.partner, inc.offset): window.at(inc.partner, inc.offset) for inc in layout_for(topology).incidences[v]
    }
    return NeighborhoodValues(v, vals)


def predict_site(params: ModelParams, window: Window, v: int) -> float:
    """Conditional mean of continuous voice v given the window's true neighbors."""
    if params.topology.voices[v].discrete:
        raise ValidationError(f"voice {v} is discrete; R2 prediction needs a continuous voice")
    return conditional_continuous(window_neighborhood(window, v, params.topology), params)[0]


def r2(predictions, actuals, baseline_mean: float) -> float:
    """``1 - SS_res / SS_baseline``; NaN when the actuals equal the baseline everywhere."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(actuals, dtype=float)
    if p.shape != y.shape or p.size == 0:
        raise ValidationError("predictions and actuals need equal nonempty lengths")
    ss_base = float(np.sum((y - baseline_mean) ** 2))
    if ss_base == 0:
        return math.nan
    return 1 - float(np.sum((y - p) ** 2)) / ss_base


def fold_seed(tune_id: str, base: int = 0) -> int:
    return (int(hashlib.sha256(tune_id.encode()).hexdigest()[:8], 16) + base) % 2**31


@dataclass
class EvalReport:
    style: str
    voices: list[str]
    pooled_r2: dict[str, float]
    mean_tune_r2: dict[str, float]
    per_tune_r2: dict[str, dict[str, float]]
    window_counts: dict[str, int]
    discrete_accuracy: dict[str, float] = field(default_factory=dict)
    skipped_folds: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def negative(self) -> list[str]:
        return [v for v, r in self.pooled_r2.items() if r < 0]

    def table(self) -> str:
        lines = [f"{'voice':<12}{'pooled R2':>12}{'mean tune R2':>15}"]
        for name in self.pooled_r2:
            flag = "  (negative)" if self.pooled_r2[name] < 0 else ""
            lines.append(f"{name:<12}{self.pooled_r2[name]:>12.4f}{self.mean_tune_r2[name]:>15.4f}{flag}")
        for name, acc in self.discrete_accuracy.items():
            lines.append(f"{name:<12}{'top-1 acc':>12}{acc:>15.4f}")
        lines.append(f"windows: {sum(self.window_counts.values())} over {len(self.window_counts)} tunes")
        return "\n".join(lines)


def loocv(corpus: Corpus, topology: Topology | None = None, config: TrainConfig = TrainConfig()) -> EvalReport:
    """Leave-one-tune-out prediction of every continuous voice.

    Each fold trains on the other tunes and predicts every interior window of
    the held-out tune; residuals are pooled over folds with the baseline mean
    taken from each fold's training set.
    """
    topology = topology or corpus.topology
    if len(corpus.tunes) < 2:
        raise ValidationError("leave-one-out needs at least two tunes")
    tunes = sorted(corpus.tunes, key=lambda t: t.id)
    corpus = Corpus(corpus.style, tuple(tunes), topology)
    cont = [v for v, voice in enumerate(topology.voices) if not voice.discrete]
    disc = [v for v, voice in enumerate(topology.voices) if voice.discrete]
    names = [voice.name for voice in topology.voices]
    res = {v: 0.0 for v in cont}
    base = {v: 0.0 for v in cont}
    hits = {v: 0 for v in disc}
    per_tune: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    skipped = []
    total = 0
    for tune in tunes:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ShortTuneWarning)
            held = extract_windows(tune, topology)
        if len(held) == 0:
            warnings.warn(f"fold {tune.id!r} has no windows; skipped", ShortTuneWarning, stacklevel=2)
            skipped.append(tune.id)
            continue
        train = corpus.without(tune.id)
        params, _ = fit(train, topology, replace(config, seed=fold_seed(tune.id, config.seed)))
        counts[tune.id] = len(held)
        total += len(held)
        per_tune[tune.id] = {}
        for v in cont:
            mean_train = float(np.mean(np.concatenate([t.values[v] for t in train.tunes])))
            mu, _ = conditional_moments(params, held, v)
            y = held.column(v, 0)
            res[v] += float(np.sum((y - mu) ** 2))
            base[v] += float(np.sum((y - mean_train) ** 2))
            per_tune[tune.id][names[v]] = r2(mu, y, mean_train)
        for v in disc:
            p = conditional_probabilities(params, held, v)
            hits[v] += int(np.sum(np.argmax(p, axis=1) == held.column(v, 0).astype(int)))
    if not counts:
        raise ValidationError("no fold produced any window")
    pooled = {names[v]: (1 - res[v] / base[v]) if base[v] > 0 else math.nan for v in cont}
    mean_tune = {
        names[v]: float(np.nanmean([per_tune[t][names[v]] for t in per_tune])) for v in cont
    }
    acc = {names[v]: hits[v] / total for v in disc}
    return EvalReport(corpus.style, names, pooled, mean_tune, per_tune, counts, acc, skipped)


@dataclass
class ScatterResult:
    rows: list[tuple[str, float, float]]
    bins: list[tuple[str, float, float]]
    pearson_r: float
    n_points: int
    threshold: float
    distance: float

    def summary(self) -> dict:
        return {
            "pearson_r": self.pearson_r,
            "n_points": self.n_points,
            "threshold": self.threshold,
            "distance": self.distance,
            "distance_metric": "rms",
        }


def agreement(corpus_vec: ObservableVector, model_vec: ObservableVector, threshold: float = 1e-2) -> tuple[float, int]:
    """Pearson r over frequency entries whose corpus value is at least ``threshold``."""
    mask = corpus_vec.frequency_mask() & (corpus_vec.values >= threshold)
    mask &= np.isfinite(model_vec.values)
    n = int(mask.sum())
    if n < 2:
        return math.nan, n
    return float(np.corrcoef(corpus_vec.values[mask], model_vec.values[mask])[0, 1]), n


def frequency_scatter(
    params: ModelParams,
    corpus: Corpus,
    gen_length: int = 10000,
    seed: int = 0,
    sweeps_factor: float = 10.0,
    threshold: float = 1e-2,
) -> ScatterResult:
    """Generate a free sequence and pair its statistics with the corpus'."""
    topo = params.topology
    if corpus.topology.voices != topo.voices:
        raise ValidationError("corpus voices do not match the model")
    seq, _ = generate(params, GenerationConfig(gen_length, sweeps_factor, seed))
    cvec = observable_vector(corpus, topo)
    mvec = observable_vector(seq, topo)
    r, n = agreement(cvec, mvec, threshold)
    return ScatterResult(
        scatter_rows(cvec, mvec), marginal_bins(corpus, [seq], topo), r, n, threshold, observable_distance(cvec, mvec)
    )
