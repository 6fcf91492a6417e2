"""Unary and pairwise sequence statistics and distances between them.

Every statistic is a pooled average: per-tune sums are added up and divided
by the total number of contributing positions, which equals a single pass
over all valid positions of all tunes.

Labels are colon-separated tokens::

    mean:v1            sd:v1             freq:v0:3
    hor.cc:v1:k2       hor.dd:v0:k1:2:5
    vert.cd:v1:v2      vert.dc:v0:v1:3   vert.dd:v0:v2:1:4
    diag.cd:v1:v0:k1:3 (voice v1 at n, voice v0 at n + 1)

Vertical entries cover unordered voice pairs (lower index first); diagonal
entries cover ordered pairs at forward lags. ``cc``/``dd``/``cd``/``dc`` name
the kinds of the first and second voice. Category indices in cd/dc labels
belong to the discrete voice of the pair.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_model import Corpus, Topology, Tune
from .errors import FormatError, ValidationError

Entry = tuple[str, float, int]

FREQUENCY_KINDS = ("freq", "hor.dd", "vert.dd", "diag.dd")


def _as_arrays(data) -> list[np.ndarray]:
    if isinstance(data, Corpus):
        return [t.values for t in data.tunes]
    if isinstance(data, Tune):
        return [data.values]
    if isinstance(data, np.ndarray):
        return [np.atleast_2d(data)]
    return [t.values if isinstance(t, Tune) else np.atleast_2d(np.asarray(t, dtype=float)) for t in data]


def _finish(label: str, total: float, count: int) -> Entry:
    return (label, total / count if count else math.nan, int(count))


def _pair_kind(topology: Topology, a: int, b: int) -> str:
    da, db = topology.voices[a].discrete, topology.voices[b].discrete
    return ("d" if da else "c") + ("d" if db else "c")


def _lagged_block(
    seqs: list[np.ndarray], a: int, b: int, k: int, topology: Topology, prefix: str
) -> list[Entry]:
    """Statistics of (voice a at n, voice b at n + k) pooled over tunes."""
    kind = _pair_kind(topology, a, b)
    Qa, Qb = topology.voices[a].Q, topology.voices[b].Q
    label = f"{prefix}.{kind}:" + (f"v{a}" if prefix == "hor" else f"v{a}:v{b}") + (f":k{k}" if k else "")
    count = 0
    if kind == "cc":
        total = 0.0
    elif kind == "dd":
        total = np.zeros(Qa * Qb)
    else:
        total = np.zeros(Qa if kind == "dc" else Qb)
    for s in seqs:
        N = s.shape[1]
        if N <= k:
            continue
        left = s[a, : N - k]
        right = s[b, k:]
        count += N - k
        if kind == "cc":
            total += float(np.dot(left, right))
        elif kind == "dd":
            total += np.bincount(left.astype(np.intp) * Qb + right.astype(np.intp), minlength=Qa * Qb)
        elif kind == "cd":
            total += np.bincount(right.astype(np.intp), weights=left, minlength=Qb)
        else:
            total += np.bincount(left.astype(np.intp), weights=right, minlength=Qa)
    if kind == "cc":
        return [_finish(label, total, count)]
    if kind == "dd":
        return [
            _finish(f"{label}:{i}:{j}", float(total[i * Qb + j]), count) for i in range(Qa) for j in range(Qb)
        ]
    return [_finish(f"{label}:{j}", float(total[j]), count) for j in range(len(total))]


def unary_stats(data, topology: Topology) -> list[Entry]:
    """Means and population standard deviations of continuous voices, category
    frequencies of discrete voices."""
    seqs = _as_arrays(data)
    N = sum(s.shape[1] for s in seqs)
    if N == 0:
        raise ValidationError("unary statistics need a nonempty sequence")
    means, sds, freqs = [], [], []
    for v, voice in enumerate(topology.voices):
        if voice.discrete:
            counts = sum(np.bincount(s[v].astype(np.intp), minlength=voice.Q) for s in seqs)
            freqs += [_finish(f"freq:v{v}:{i}", float(counts[i]), N) for i in range(voice.Q)]
        else:
            total = sum(float(np.sum(s[v])) for s in seqs)
            mean = total / N
            ss = sum(float(np.sum((s[v] - mean) ** 2)) for s in seqs)
            means.append((f"mean:v{v}", mean, N))
            sds.append((f"sd:v{v}", math.sqrt(ss / N), N))
    return means + sds + freqs


def horizontal_corrs(data, topology: Topology, k_hor: int | None = None) -> list[Entry]:
    """Same-voice products (continuous) or pair frequencies (discrete) at lags 1..k_hor."""
    seqs = _as_arrays(data)
    k_hor = topology.k_hor if k_hor is None else k_hor
    out: list[Entry] = []
    for v in range(topology.n_voices):
        for k in range(1, k_hor + 1):
            out += _lagged_block(seqs, v, v, k, topology, "hor")
    return out


def vertical_corrs(data, topology: Topology) -> list[Entry]:
    seqs = _as_arrays(data)
    if sum(s.shape[1] for s in seqs) == 0:
        raise ValidationError("vertical correlations need a nonempty sequence")
    out: list[Entry] = []
    V = topology.n_voices
    for a in range(V):
        for b in range(a + 1, V):
            out += _lagged_block(seqs, a, b, 0, topology, "vert")
    return out


def diagonal_corrs(data, topology: Topology, k_diag: int | None = None) -> list[Entry]:
    seqs = _as_arrays(data)
    k_diag = topology.k_diag if k_diag is None else k_diag
    out: list[Entry] = []
    V = topology.n_voices
    for a in range(V):
        for b in range(V):
            if a == b:
                continue
            for k in range(1, k_diag + 1):
                out += _lagged_block(seqs, a, b, k, topology, "diag")
    return out


def label_kind(label: str) -> str:
    return label.split(":", 1)[0]


@dataclass(frozen=True, eq=False)
class ObservableVector:
    labels: tuple[str, ...]
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("observable labels must be unique")
        vals = np.array(self.values, dtype=float)
        wts = np.array(self.weights, dtype=np.int64)
        vals.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", wts)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])

    def __eq__(self, other):
        if not isinstance(other, ObservableVector):
            return NotImplemented
        return (
            self.labels == other.labels
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.weights, other.weights)
        )

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, self.values.tolist()))

    def kinds(self) -> list[str]:
        return [label_kind(lab) for lab in self.labels]

    def frequency_mask(self) -> np.ndarray:
        return np.array([k in FREQUENCY_KINDS for k in self.kinds()], dtype=bool)

    @classmethod
    def from_entries(cls, entries: Iterable[Entry]) -> "ObservableVector":
        entries = list(entries)
        return cls(tuple(e[0] for e in entries), [e[1] for e in entries], [e[2] for e in entries])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "value", "weight"])
        for lab, val, wt in zip(self.labels, self.values.tolist(), self.weights.tolist()):
            w.writerow([lab, repr(val), wt])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObservableVector":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["label", "value", "weight"]:
            raise FormatError("observable CSV must start with header label,value,weight")
        try:
            return cls(tuple(r[0] for r in rows[1:]), [float(r[1]) for r in rows[1:]], [int(r[2]) for r in rows[1:]])
        except (IndexError, ValueError) as exc:
            raise FormatError(f"malformed observable CSV: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ObservableVector":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def observable_vector(data, topology: Topology) -> ObservableVector:
    """All statistics in canonical order: mean, sd, freq, hor, vert, diag."""
    if isinstance(data, Corpus) and data.topology.voices != topology.voices:
        raise ValidationError("corpus voices do not match the topology")
    seqs = _as_arrays(data)
    for s in seqs:
        if s.shape[0] != topology.n_voices:
            raise ValidationError(f"sequence has {s.shape[0]} voices, topology expects {topology.n_voices}")
    entries = (
        unary_stats(seqs, topology)
        + horizontal_corrs(seqs, topology)
        + vertical_corrs(seqs, topology)
        + diagonal_corrs(seqs, topology)
    )
    return ObservableVector.from_entries(entries)


def observable_distance(a: ObservableVector, b: ObservableVector) -> float:
    """Root-mean-square difference over entries present in both vectors."""
    if a.labels != b.labels:
        raise ValidationError("observable vectors have different label sets")
    d = a.values - b.values
    ok = np.isfinite(d)
    if not ok.any():
        return math.nan
    return float(np.sqrt(np.mean(d[ok] ** 2)))


def marginal_bins(
    reference: Sequence[np.ndarray] | Corpus, other, topology: Topology, n_bins: int = 20
) -> list[tuple[str, float, float]]:
    """Equal-probability bins of each continuous marginal as frequency pairs.

    Bin edges are the quantiles of ``reference``; returns
    ``(label, reference_freq, other_freq)`` rows. Display aid only: these rows
    are not part of the observable vector.
    """
    ref = _as_arrays(reference)
    oth = _as_arrays(other)
    rows = []
    for v, voice in enumerate(topology.voices):
        if voice.discrete:
            continue
        r = np.concatenate([s[v] for s in ref])
        o = np.concatenate([s[v] for s in oth])
        edges = np.quantile(r, np.linspace(0, 1, n_bins + 1)[1:-1])
        rf = np.bincount(np.searchsorted(edges, r, side="right"), minlength=n_bins) / r.size
        of = np.bincount(np.searchsorted(edges, o, side="right"), minlength=n_bins) / o.size
        rows += [(f"bin:v{v}:{i}", float(rf[i]), float(of[i])) for i in range(n_bins)]
    return rows


def scatter_rows(corpus_vec: ObservableVector, model_vec: ObservableVector) -> list[tuple[str, float, float]]:
    if corpus_vec.labels != model_vec.labels:
        raise ValidationError("observable vectors have different label sets")
    return list(zip(corpus_vec.labels, corpus_vec.values.tolist(), model_vec.values.tolist()))


def scatter_csv(rows: Iterable[tuple[str, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "corpus_value", "model_value"])
    for lab, c, m in rows:
        w.writerow([lab, repr(float(c)), repr(float(m))])
    return buf.getvalue()
