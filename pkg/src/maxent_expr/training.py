"""Pseudo-log-likelihood training.

The loss is the sum over voices of the mean negative log conditional of each
window's center value given its neighbors, plus an L2 penalty on fields and
couplings. Gradients are analytic: for a discrete site the derivative with
respect to its candidate energies is ``onehot(observed) - p``; for a
continuous site with conditional ``N(mu, s2)`` it is ``y - mu`` for the
linear coefficient and ``y**2 - (mu**2 + s2)`` for the self-coefficient.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .data_model import Corpus, Topology, WindowSet, corpus_windows
from .errors import FloorWarning, NumericalError, ValidationError
from .model_core import A_MIN, Layout, ModelParams, config_digest, layout_for

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    l2_strength: float = 1e-4
    step_size: float = 0.05
    max_iterations: int = 5000
    grad_tolerance: float = 1e-6
    loss_rel_tolerance: float = 1e-9
    seed: int = 0
    method: str = "lbfgs"

    def __post_init__(self):
        if self.method not in ("lbfgs", "rprop"):
            raise ValidationError(f"unknown optimizer {self.method!r}; use 'lbfgs' or 'rprop'")
        if self.l2_strength < 0:
            raise ValidationError("l2_strength must be >= 0")
        for name in ("step_size", "grad_tolerance", "loss_rel_tolerance"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    loss: float
    voice_losses: list[float]
    iterations: int
    converged: bool
    reason: str
    loss_trace: list[float] = field(default_factory=list)
    grad_norm_trace: list[float] = field(default_factory=list)
    floor_clips: int = 0
    rejected_steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def trace_csv(self) -> str:
        lines = ["iteration,loss,grad_norm"]
        for i, (l, g) in enumerate(zip(self.loss_trace, self.grad_norm_trace)):
            lines.append(f"{i},{l!r},{g!r}")
        return "\n".join(lines) + "\n"


class _Design:
    """Window columns arranged per voice and per incidence for fast evaluation."""

    def __init__(self, layout: Layout, windows: WindowSet):
        topo = layout.topology
        if windows.values.shape[1] != topo.n_voices:
            raise ValidationError("windows do not match the topology's voice count")
        if windows.half_width < topo.half_width:
            raise ValidationError("windows are narrower than the topology's interaction range")
        self.M = len(windows)
        self.layout = layout
        self.targets = []
        self.terms = []
        for v, voice in enumerate(topo.voices):
            col = windows.column(v, 0)
            self.targets.append(col.astype(np.intp) if voice.discrete else np.ascontiguousarray(col))
            terms = []
            for inc in layout.incidences[v]:
                z = windows.column(inc.partner, inc.offset)
                pdisc = topo.voices[inc.partner].discrete
                terms.append((inc, pdisc, z.astype(np.intp) if pdisc else np.ascontiguousarray(z)))
            self.terms.append(terms)


def _design(params: ModelParams, windows: WindowSet) -> _Design:
    key = ("design", params.topology)
    d = windows._cache.get(key)
    if d is None:
        d = _Design(params.layout, windows)
        windows._cache[key] = d
    return d


def _candidate_energies(params: ModelParams, d: _Design, v: int) -> np.ndarray:
    Q = params.topology.voices[v].Q
    E = np.broadcast_to(params.field(v), (d.M, Q)).copy()
    for inc, pdisc, z in d.terms[v]:
        J = params.block(inc.block.key)
        if pdisc:
            E += J.T[z] if inc.side == 0 else J[z]
        else:
            E += z[:, None] * J[None, :]
    return E


def _linear_coefficients(params: ModelParams, d: _Design, v: int) -> np.ndarray:
    b = np.full(d.M, params.field(v))
    for inc, pdisc, z in d.terms[v]:
        J = params.block(inc.block.key)
        b += J[z] if pdisc else J * z
    return b


def _evaluate(params: ModelParams, windows: WindowSet, l2: float, want_grad: bool):
    if len(windows) == 0:
        raise ValidationError("pseudo-likelihood needs at least one window")
    d = _design(params, windows)
    topo = params.topology
    M = d.M
    grad = np.zeros(params.layout.size) if want_grad else None
    voice_losses = []
    for v, voice in enumerate(topo.voices):
        target = d.targets[v]
        if voice.discrete:
            E = _candidate_energies(params, d, v)
            neg = -E
            lse = logsumexp(neg, axis=1)
            nll = E[np.arange(M), target] + lse
            voice_losses.append(float(np.mean(nll)))
            if want_grad:
                R = -np.exp(neg - lse[:, None])
                R[np.arange(M), target] += 1.0
                R /= M
                grad[params.layout[f"h:v{v}"].slice] += R.sum(axis=0)
                for inc, pdisc, z in d.terms[v]:
                    blk = inc.block
                    if pdisc:
                        Qp = topo.voices[inc.partner].Q
                        G = np.stack([np.bincount(z, weights=R[:, q], minlength=Qp) for q in range(voice.Q)], axis=1)
                        if inc.side == 0:
                            G = G.T
                        grad[blk.slice] += G.ravel()
                    else:
                        grad[blk.slice] += z @ R
        else:
            a = params.self_coefficient(v)
            b = _linear_coefficients(params, d, v)
            y = target
            mu = -b / (2 * a)
            var = 1 / (2 * a)
            resid = y - mu
            nll = 0.5 * math.log(2 * math.pi * var) + resid**2 / (2 * var)
            voice_losses.append(float(np.mean(nll)))
            if want_grad:
                g = resid / M
                grad[params.layout[f"h:v{v}"].start] += g.sum()
                grad[params.layout[f"a:v{v}"].start] += float(np.sum(y * y - mu * mu - var)) / M
                for inc, pdisc, z in d.terms[v]:
                    blk = inc.block
                    if pdisc:
                        grad[blk.slice] += np.bincount(z, weights=g, minlength=blk.size)
                    else:
                        grad[blk.start] += float(z @ g)
    loss = sum(voice_losses)
    if l2:
        mask = params.layout.regularization_mask()
        th = params.theta[mask]
        loss += l2 * float(th @ th)
        if want_grad:
            grad[mask] += 2 * l2 * th
    return loss, voice_losses, grad


def negative_pseudo_loglik(params: ModelParams, windows: WindowSet, l2_strength: float = 0.0) -> tuple[float, list[float]]:
    """Total loss and the per-voice mean negative log conditionals."""
    loss, per_voice, _ = _evaluate(params, windows, l2_strength, False)
    return loss, per_voice


def gradient(params: ModelParams, windows: WindowSet, l2_strength: float = 0.0) -> np.ndarray:
    return _evaluate(params, windows, l2_strength, True)[2]


def loss_and_gradient(params: ModelParams, windows: WindowSet, l2_strength: float = 0.0):
    loss, _, grad = _evaluate(params, windows, l2_strength, True)
    return loss, grad


def conditional_moments(params: ModelParams, windows: WindowSet, v: int) -> tuple[np.ndarray, float]:
    """Conditional means (one per window) and the shared variance of continuous voice v."""
    if params.topology.voices[v].discrete:
        raise ValidationError(f"voice {v} is discrete")
    b = _linear_coefficients(params, _design(params, windows), v)
    a = params.self_coefficient(v)
    return -b / (2 * a), 1 / (2 * a)


def conditional_probabilities(params: ModelParams, windows: WindowSet, v: int) -> np.ndarray:
    """``(M, Q)`` conditional category probabilities of discrete voice v."""
    if not params.topology.voices[v].discrete:
        raise ValidationError(f"voice {v} is continuous")
    neg = -_candidate_energies(params, _design(params, windows), v)
    return np.exp(neg - logsumexp(neg, axis=1)[:, None])


def initial_params(topology: Topology, windows: WindowSet) -> ModelParams:
    """Zero fields and couplings; each self-coefficient matches the voice's variance."""
    theta = np.zeros(layout_for(topology).size)
    for v, i in layout_for(topology).a_indices().items():
        var = float(np.var(windows.column(v, 0)))
        if var < VARIANCE_FLOOR:
            warnings.warn(f"voice {v} has variance {var:g}; using floor {VARIANCE_FLOOR:g}", FloorWarning, stacklevel=3)
            var = VARIANCE_FLOOR
        theta[i] = max(1 / (2 * var), A_MIN)
    return ModelParams(topology, theta)


def _projected_grad_norm(theta: np.ndarray, grad: np.ndarray, a_idx: np.ndarray) -> float:
    pg = np.array(grad)
    at_floor = theta[a_idx] <= A_MIN
    pg[a_idx[at_floor]] = np.minimum(pg[a_idx[at_floor]], 0.0)
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def _minimize_lbfgs(params: ModelParams, windows: WindowSet, config: TrainConfig):
    """Bound-constrained limited-memory quasi-Newton descent (``a >= A_MIN``).

    Stops when the projected gradient max-norm drops below ``grad_tolerance``
    or the relative loss decrease below ``loss_rel_tolerance``.
    """
    l2 = config.l2_strength
    a_idx = np.array(sorted(params.layout.a_indices().values()), dtype=np.intp)
    bounds = [(None, None)] * params.layout.size
    for i in a_idx:
        bounds[i] = (A_MIN, None)
    last: dict = {}
    loss_trace: list[float] = []

    def fun(th):
        loss, grad = loss_and_gradient(params.with_theta(np.maximum(th, _lower(th, a_idx))), windows, l2)
        if not math.isfinite(loss):
            raise NumericalError(f"loss became non-finite at iteration {len(loss_trace)}")
        last["theta"], last["loss"], last["grad"] = th.copy(), loss, grad
        return loss, grad

    loss0, grad0 = fun(np.array(params.theta))
    loss_trace.append(loss0)
    gnorm_trace = [_projected_grad_norm(params.theta, grad0, a_idx)]

    def callback(xk):
        if not np.array_equal(xk, last["theta"]):
            fun(xk)
        loss_trace.append(last["loss"])
        gnorm_trace.append(_projected_grad_norm(xk, last["grad"], a_idx))

    res = optimize.minimize(
        fun,
        np.array(params.theta),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=callback,
        options={
            "maxiter": config.max_iterations,
            "maxfun": 20 * config.max_iterations,
            "gtol": config.grad_tolerance,
            "ftol": config.loss_rel_tolerance,
            "maxcor": 20,
        },
    )
    theta = np.maximum(res.x, _lower(res.x, a_idx))
    params = params.with_theta(theta)
    final = _projected_grad_norm(theta, res.jac, a_idx)
    if gnorm_trace[-1] != final:
        gnorm_trace[-1] = final
    msg = str(res.message)
    if final < config.grad_tolerance:
        reason, converged = "grad_tolerance", True
    elif "REDUCTION OF F" in msg.upper().replace("_", " "):
        reason, converged = "loss_rel_tolerance", True
    elif res.nit >= config.max_iterations:
        reason, converged = "max_iterations", False
    else:
        reason, converged = msg, bool(res.success)
    clips = int(np.sum(theta[a_idx] <= A_MIN))
    return params, loss_trace, gnorm_trace, int(res.nit), converged, reason, clips, 0


def _lower(th: np.ndarray, a_idx: np.ndarray) -> np.ndarray:
    low = np.full(th.shape, -np.inf)
    low[a_idx] = A_MIN
    return low


def _minimize_rprop(params: ModelParams, windows: WindowSet, config: TrainConfig):
    """Full-batch sign-based descent with per-parameter step sizes.

    Each coordinate keeps its own step, grown by 1.2 while its gradient sign
    is stable and halved when the sign flips. A step that raises the loss is
    rejected and all steps are halved, so accepted losses never increase.
    Self-coefficients are projected back onto ``a >= A_MIN``.
    """
    l2 = config.l2_strength
    theta = np.array(params.theta)
    a_idx = np.array(sorted(params.layout.a_indices().values()), dtype=np.intp)
    steps = np.full(theta.size, config.step_size)
    # scale-aware start for self-coefficients, whose optimum can be large
    steps[a_idx] = np.maximum(config.step_size, 0.05 * theta[a_idx])
    step_max = 1e6
    step_min = 1e-14
    loss, grad = loss_and_gradient(params, windows, l2)
    loss_trace = [loss]
    gnorm_trace = []
    prev_sign = np.zeros(theta.size)
    clips = rejected = 0
    reason = "max_iterations"
    converged = False
    it = 0

    def proj_grad_norm(th, g):
        return _projected_grad_norm(th, g, a_idx)

    gnorm_trace.append(proj_grad_norm(theta, grad))
    while it < config.max_iterations:
        if gnorm_trace[-1] < config.grad_tolerance:
            reason, converged = "grad_tolerance", True
            break
        it += 1
        sign = np.sign(grad)
        flip = sign * prev_sign < 0
        same = sign * prev_sign > 0
        steps[same] = np.minimum(steps[same] * 1.2, step_max)
        steps[flip] = np.maximum(steps[flip] * 0.5, step_min)
        cand = theta - sign * steps
        low = cand[a_idx] < A_MIN
        if low.any():
            clips += int(low.sum())
            cand[a_idx[low]] = A_MIN
        new = params.with_theta(cand)
        new_loss, new_grad = loss_and_gradient(new, windows, l2)
        if not math.isfinite(new_loss):
            raise NumericalError(f"loss became non-finite at iteration {it}")
        if new_loss > loss + 1e-12 * max(1.0, abs(loss)):
            rejected += 1
            steps *= 0.5
            prev_sign = np.zeros(theta.size)
            if np.all(steps <= step_min):
                reason, converged = "step_underflow", True
                break
            continue
        rel = abs(loss - new_loss) / max(abs(loss), 1e-300)
        theta, params, loss, grad = cand, new, new_loss, new_grad
        prev_sign = np.where(flip, 0.0, sign)
        loss_trace.append(loss)
        gnorm_trace.append(proj_grad_norm(theta, grad))
        if rel < config.loss_rel_tolerance:
            reason, converged = "loss_rel_tolerance", True
            break
    else:
        if gnorm_trace[-1] < config.grad_tolerance:
            reason, converged = "grad_tolerance", True
    return params, loss_trace, gnorm_trace, it, converged, reason, clips, rejected


def corpus_summary(corpus: Corpus, topology: Topology) -> dict:
    """Per-voice marginal moments stored with a model (used by the random baseline)."""
    out = {}
    for v, voice in enumerate(topology.voices):
        row = np.concatenate([t.values[v] for t in corpus.tunes])
        if voice.discrete:
            out[f"v{v}"] = {"freq": (np.bincount(row.astype(np.intp), minlength=voice.Q) / row.size).tolist()}
        else:
            out[f"v{v}"] = {"mean": float(row.mean()), "sd": float(row.std())}
    return out


def fit_windows(topology: Topology, windows: WindowSet, config: TrainConfig = TrainConfig()) -> tuple[ModelParams, TrainReport]:
    if len(windows) == 0:
        raise ValidationError("training needs at least one window")
    params = initial_params(topology, windows)
    minimize = _minimize_lbfgs if config.method == "lbfgs" else _minimize_rprop
    params, lt, gt, it, converged, reason, clips, rejected = minimize(params, windows, config)
    if clips:
        warnings.warn(f"self-coefficients hit the floor {A_MIN:g} {clips} times", FloorWarning, stacklevel=2)
    loss, per_voice = negative_pseudo_loglik(params, windows, config.l2_strength)
    log.info("fit: %d iterations, loss %.6g, %s", it, loss, reason)
    report = TrainReport(loss, per_voice, it, converged, reason, lt, gt, clips, rejected)
    return params, report


def fit(corpus: Corpus, topology: Topology | None = None, config: TrainConfig = TrainConfig()) -> tuple[ModelParams, TrainReport]:
    """Fit a model to all windows of a corpus, pooled with equal weight."""
    topology = topology or corpus.topology
    if corpus.topology.voices != topology.voices:
        raise ValidationError("corpus voices do not match the topology")
    windows = corpus_windows(corpus, topology)
    if len(windows) == 0:
        raise ValidationError("corpus yields no training windows")
    params, report = fit_windows(topology, windows, config)
    meta = {
        "style": corpus.style,
        "train_config": config.to_dict(),
        "train_config_digest": config_digest(config.to_dict()),
        "windows": len(windows),
        "corpus_stats": corpus_summary(corpus, topology),
    }
    return params.with_metadata(**meta), report
