"""Model parameters, local energies and exact single-site conditionals.

All parameters live in one flat vector ``theta``; a :class:`Layout` maps it
to named blocks. Every coupling block couples ``Z_left(n)`` to
``Z_right(n + offset)``:

* ``hor:v{v}:k{k}``       voice v with itself at lag k
* ``vert:v{a}:v{b}``      voices a < b at the same note
* ``diag:v{a}:v{b}:k{k}`` voice a at n with voice b at n + k (ordered pair)

The block's shape follows the kinds of the two voices: scalar (cont-cont),
``(Q_left, Q_right)`` matrix (disc-disc), or a vector indexed by the discrete
side's category (cont-disc / disc-cont). The energy term is ``J y y'``,
``J[x, x']``, or ``J[x] y`` respectively. Unary terms are ``h[x]`` for
discrete voices and ``a y**2 + h y`` for continuous ones.

A site's conditional is ``exp(-local_energy)`` normalized over its value:
softmax for discrete voices, a Gaussian with mean ``-b / (2a)`` and variance
``1 / (2a)`` for continuous voices, ``b`` being the total linear coefficient.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .data_model import Topology
from .errors import FormatError, ParameterError, ValidationError

A_MIN = 1e-6
MODEL_FORMAT = "maxent-expr-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Block:
    key: str
    kind: str  # "h", "a", "hor", "vert" or "diag"
    left: int
    right: int
    offset: int
    shape: tuple[int, ...]
    start: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)

    @property
    def coupling(self) -> bool:
        return self.kind in ("hor", "vert", "diag")

    @property
    def regularized(self) -> bool:
        return self.kind != "a"


@dataclass(frozen=True)
class Incidence:
    """How one coupling block enters the conditional of a voice.

    ``partner`` sits at relative note ``offset``; ``side`` is 0 when the voice
    is the block's left variable and 1 when it is the right one.
    """

    block: Block
    partner: int
    offset: int
    side: int


def _coupling_shape(topology: Topology, a: int, b: int) -> tuple[int, ...]:
    Qa, Qb = topology.voices[a].Q, topology.voices[b].Q
    if Qa is None and Qb is None:
        return ()
    if Qa is not None and Qb is not None:
        return (Qa, Qb)
    return (Qa if Qa is not None else Qb,)


@dataclass(frozen=True)
class Layout:
    topology: Topology
    blocks: tuple[Block, ...]
    size: int
    incidences: tuple[tuple[Incidence, ...], ...] = field(repr=False)
    index: dict[str, Block] = field(repr=False, compare=False, hash=False, default_factory=dict)

    def __post_init__(self):
        self.index.update({b.key: b for b in self.blocks})

    def __getitem__(self, key: str) -> Block:
        return self.index[key]

    def regularization_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for b in self.blocks:
            if b.regularized:
                mask[b.slice] = True
        return mask

    def a_indices(self) -> dict[int, int]:
        return {b.left: b.start for b in self.blocks if b.kind == "a"}


@lru_cache(maxsize=64)
def layout_for(topology: Topology) -> Layout:
    specs: list[tuple[str, str, int, int, int, tuple[int, ...]]] = []
    V = topology.n_voices
    for v, voice in enumerate(topology.voices):
        specs.append((f"h:v{v}", "h", v, v, 0, (voice.Q,) if voice.discrete else ()))
    for v, voice in enumerate(topology.voices):
        if not voice.discrete:
            specs.append((f"a:v{v}", "a", v, v, 0, ()))
    for v in range(V):
        for k in range(1, topology.k_hor + 1):
            specs.append((f"hor:v{v}:k{k}", "hor", v, v, k, _coupling_shape(topology, v, v)))
    for a in range(V):
        for b in range(a + 1, V):
            specs.append((f"vert:v{a}:v{b}", "vert", a, b, 0, _coupling_shape(topology, a, b)))
    for a in range(V):
        for b in range(V):
            if a != b:
                for k in range(1, topology.k_diag + 1):
                    specs.append((f"diag:v{a}:v{b}:k{k}", "diag", a, b, k, _coupling_shape(topology, a, b)))
    blocks = []
    start = 0
    for key, kind, left, right, off, shape in specs:
        blk = Block(key, kind, left, right, off, shape, start)
        blocks.append(blk)
        start += blk.size
    inc: list[list[Incidence]] = [[] for _ in range(V)]
    for blk in blocks:
        if not blk.coupling:
            continue
        inc[blk.left].append(Incidence(blk, blk.right, blk.offset, 0))
        inc[blk.right].append(Incidence(blk, blk.left, -blk.offset, 1))
    return Layout(topology, tuple(blocks), start, tuple(tuple(i) for i in inc))


class ModelParams:
    """Immutable parameter vector bound to a topology."""

    def __init__(self, topology: Topology, theta: np.ndarray | None = None, metadata: Mapping | None = None):
        self.topology = topology
        self.layout = layout_for(topology)
        if theta is None:
            theta = np.zeros(self.layout.size)
            for i in self.layout.a_indices().values():
                theta[i] = 0.5
        theta = np.array(theta, dtype=float)
        if theta.shape != (self.layout.size,):
            raise ParameterError(f"theta has shape {theta.shape}, layout needs ({self.layout.size},)")
        if not np.all(np.isfinite(theta)):
            raise ParameterError("parameters must be finite")
        for v, i in self.layout.a_indices().items():
            if theta[i] < A_MIN:
                raise ParameterError(f"self-coefficient a of voice {v} is {theta[i]!r} < {A_MIN}")
        theta.setflags(write=False)
        self.theta = theta
        self.metadata = dict(metadata or {})
        self._blocks = {
            b.key: float(theta[b.start]) if not b.shape else theta[b.slice].reshape(b.shape)
            for b in self.layout.blocks
        }

    def block(self, key: str) -> np.ndarray | float:
        return self._blocks[key]

    def field(self, v: int):
        return self.block(f"h:v{v}")

    def self_coefficient(self, v: int) -> float:
        return self.block(f"a:v{v}")

    def with_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(self.topology, theta, self.metadata)

    def with_metadata(self, **kw) -> "ModelParams":
        return ModelParams(self.topology, self.theta, {**self.metadata, **kw})

    @classmethod
    def from_blocks(cls, topology: Topology, blocks: Mapping[str, object], metadata: Mapping | None = None) -> "ModelParams":
        """Build parameters from named blocks; unnamed blocks keep their defaults."""
        layout = layout_for(topology)
        theta = np.array(cls(topology).theta)
        for key, value in blocks.items():
            if key not in layout.index:
                raise ValidationError(f"unknown parameter block {key!r}")
            b = layout[key]
            arr = np.asarray(value, dtype=float)
            if arr.shape != b.shape:
                raise ValidationError(f"block {key!r} has shape {arr.shape}, expected {b.shape}")
            theta[b.slice] = arr.ravel()
        return cls(topology, theta, metadata)

    def blocks(self) -> dict[str, np.ndarray | float]:
        return {b.key: self.block(b.key) for b in self.layout.blocks}

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.topology == other.topology
            and np.array_equal(self.theta, other.theta)
            and self.metadata == other.metadata
        )

    def __repr__(self):
        return f"ModelParams({self.layout.size} parameters, {self.topology.n_voices} voices)"


@dataclass(frozen=True)
class NeighborhoodValues:
    """Values of the present neighbors of ``(voice, note)`` keyed by (voice, offset)."""

    voice: int
    values: Mapping[tuple[int, int], float]


def gather_neighborhood(
    state: np.ndarray, v: int, n: int, topology: Topology, layout: Layout | None = None
) -> NeighborhoodValues:
    """Neighbors of site (v, n) in a ``(V, N)`` state; out-of-range slots are absent."""
    N = state.shape[1]
    vals: dict[tuple[int, int], float] = {}
    for inc in (layout or layout_for(topology)).incidences[v]:
        m = n + inc.offset
        if 0 <= m < N:
            vals[(inc.partner, inc.offset)] = state[inc.partner, m]
    return NeighborhoodValues(v, vals)


def _check_voice(params: ModelParams, nb: NeighborhoodValues, v: int | None, discrete: bool) -> int:
    v = nb.voice if v is None else v
    if v != nb.voice:
        raise ValidationError(f"neighborhood belongs to voice {nb.voice}, not {v}")
    if params.topology.voices[v].discrete != discrete:
        kind = "discrete" if discrete else "continuous"
        raise ValidationError(f"voice {v} is not {kind}")
    return v


def discrete_energies(params: ModelParams, nb: NeighborhoodValues, v: int | None = None) -> np.ndarray:
    """Local energy of every category of discrete voice v given its neighbors."""
    v = _check_voice(params, nb, v, True)
    topo = params.topology
    e = np.array(params.field(v), dtype=float)
    for inc in params.layout.incidences[v]:
        z = nb.values.get((inc.partner, inc.offset))
        if z is None:
            continue
        J = params.block(inc.block.key)
        if topo.voices[inc.partner].discrete:
            x = int(z)
            e += J[:, x] if inc.side == 0 else J[x, :]
        else:
            e += J * z
    return e


def linear_coefficient(params: ModelParams, nb: NeighborhoodValues, v: int | None = None) -> float:
    """Total coefficient of y in the local energy of continuous voice v."""
    v = _check_voice(params, nb, v, False)
    topo = params.topology
    b = params.field(v)
    for inc in params.layout.incidences[v]:
        z = nb.values.get((inc.partner, inc.offset))
        if z is None:
            continue
        J = params.block(inc.block.key)
        if topo.voices[inc.partner].discrete:
            b += J[int(z)]
        else:
            b += J * z
    return float(b)


def local_energy(z: float, nb: NeighborhoodValues, params: ModelParams) -> float:
    v = nb.voice
    voice = params.topology.voices[v]
    if voice.discrete:
        if int(z) != z or not 0 <= z < voice.Q:
            raise ValidationError(f"category {z!r} outside [0, {voice.Q}) for voice {v}")
        return float(discrete_energies(params, nb)[int(z)])
    return params.self_coefficient(v) * z * z + linear_coefficient(params, nb) * z


def conditional_discrete(nb: NeighborhoodValues, params: ModelParams, v: int | None = None) -> np.ndarray:
    e = -discrete_energies(params, nb, v)
    e -= e.max()
    p = np.exp(e)
    return p / p.sum()


def conditional_continuous(nb: NeighborhoodValues, params: ModelParams, v: int | None = None) -> tuple[float, float]:
    """Mean and variance of the Gaussian conditional of a continuous site."""
    v = _check_voice(params, nb, v, False)
    a = params.self_coefficient(v)
    if a < A_MIN:
        raise ParameterError(f"self-coefficient a of voice {v} is {a!r} < {A_MIN}")
    b = linear_coefficient(params, nb, v)
    return -b / (2 * a), 1 / (2 * a)


def log_conditional(z: float, nb: NeighborhoodValues, params: ModelParams) -> float:
    """Log probability (discrete) or log density (continuous) of z at a site."""
    v = nb.voice
    if params.topology.voices[v].discrete:
        e = -discrete_energies(params, nb)
        return float(e[int(z)] - logsumexp(e))
    mu, var = conditional_continuous(nb, params)
    return -0.5 * math.log(2 * math.pi * var) - (z - mu) ** 2 / (2 * var)


def _pair_term(J, zl: np.ndarray, zr: np.ndarray, dl: bool, dr: bool) -> np.ndarray:
    if dl and dr:
        return J[zl.astype(np.intp), zr.astype(np.intp)]
    if dl:
        return J[zl.astype(np.intp)] * zr
    if dr:
        return zl * J[zr.astype(np.intp)]
    return J * zl * zr


def total_energy(state: np.ndarray, params: ModelParams) -> float:
    """Energy of a full ``(V, N)`` configuration, each pairwise term counted once."""
    topo = params.topology
    state = np.asarray(state, dtype=float)
    N = state.shape[1]
    total = 0.0
    for v, voice in enumerate(topo.voices):
        if voice.discrete:
            total += float(np.sum(params.field(v)[state[v].astype(np.intp)]))
        else:
            y = state[v]
            total += float(params.self_coefficient(v) * np.sum(y * y) + params.field(v) * np.sum(y))
    for blk in params.layout.blocks:
        if not blk.coupling or blk.offset >= N:
            continue
        zl = state[blk.left, : N - blk.offset]
        zr = state[blk.right, blk.offset :]
        total += float(
            np.sum(_pair_term(params.block(blk.key), zl, zr, topo.voices[blk.left].discrete, topo.voices[blk.right].discrete))
        )
    return total


def canonical_gauge(params: ModelParams) -> ModelParams:
    """Equivalent parameters in the zero-sum gauge.

    Disc-disc blocks are double-centered, vector blocks and discrete fields
    are centered, and the removed row/column/mean parts are moved into the
    fields they duplicate. Conditionals of sites with a complete neighborhood
    are unchanged; sites near a free boundary may differ.
    """
    topo = params.topology
    blocks = {k: np.array(v, dtype=float) for k, v in params.blocks().items()}
    for blk in params.layout.blocks:
        if not blk.coupling:
            continue
        J = blocks[blk.key]
        dl, dr = topo.voices[blk.left].discrete, topo.voices[blk.right].discrete
        if dl and dr:
            rows = J.mean(axis=1, keepdims=True)
            cols = J.mean(axis=0, keepdims=True)
            grand = J.mean()
            blocks[f"h:v{blk.left}"] += rows[:, 0] - grand
            blocks[f"h:v{blk.right}"] += cols[0] - grand
            blocks[blk.key] = J - rows - cols + grand
        elif dl or dr:
            m = J.mean()
            cont = blk.right if dl else blk.left
            blocks[f"h:v{cont}"] = blocks[f"h:v{cont}"] + m
            blocks[blk.key] = J - m
    for v, voice in enumerate(topo.voices):
        if voice.discrete:
            blocks[f"h:v{v}"] = blocks[f"h:v{v}"] - blocks[f"h:v{v}"].mean()
    return ModelParams.from_blocks(topo, blocks, params.metadata)


# -- serialization -------------------------------------------------------------


def _json_block(x):
    return x.tolist() if isinstance(x, np.ndarray) else float(x)


def config_digest(config: Mapping) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def serialize(params: ModelParams) -> bytes:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "topology": params.topology.to_dict(),
        "params": {k: _json_block(v) for k, v in params.blocks().items()},
        "metadata": params.metadata,
    }
    return (json.dumps(doc, indent=1, sort_keys=False) + "\n").encode("utf-8")


def deserialize(data: bytes | str) -> ModelParams:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"not a model file (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {doc.get('version')!r}, expected {MODEL_VERSION}")
    topo = Topology.from_dict(doc["topology"])
    layout = layout_for(topo)
    blocks = doc.get("params", {})
    missing = [b.key for b in layout.blocks if b.key not in blocks]
    if missing:
        raise FormatError(f"model file lacks parameter blocks {missing[:5]}")
    return ModelParams.from_blocks(topo, blocks, doc.get("metadata", {}))


def save_model(params: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(serialize(params))


def load_model(path: str | Path) -> ModelParams:
    return deserialize(Path(path).read_bytes())
