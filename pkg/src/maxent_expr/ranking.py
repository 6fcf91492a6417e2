"""Bradley-Terry potentials from pairwise comparison votes.

``P(i beats j) = exp(b_i) / (exp(b_i) + exp(b_j))``. Potentials are fitted
by maximum likelihood with the minorization-maximization (Zermelo) update

    p_i <- W_i / sum_j n_ij / (p_i + p_j)

where ``W_i`` is the total number of wins of item i and ``n_ij`` the number of
comparisons between i and j. The reference item is pinned to potential 0.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import FormatError, NumericalError, ValidationError


@dataclass(frozen=True, eq=False)
class VoteMatrix:
    """``counts[i, j]`` is the number of votes "item i beats item j"."""

    items: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        c = np.array(self.counts, dtype=float)
        n = len(self.items)
        if c.shape != (n, n):
            raise ValidationError(f"vote matrix has shape {c.shape}, expected ({n}, {n})")
        if len(set(self.items)) != n:
            raise ValidationError("item labels must be unique")
        if np.any(c < 0) or np.any(c != np.round(c)):
            raise ValidationError("vote counts must be nonnegative integers")
        if np.any(np.diag(c) != 0):
            raise ValidationError("an item cannot beat itself")
        if c.sum() == 0:
            raise ValidationError("no votes")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_records(cls, records: Sequence[tuple[str, str, int]], items: Sequence[str] | None = None) -> "VoteMatrix":
        labels = list(items) if items is not None else []
        for w, l, _ in records:
            for x in (w, l):
                if x not in labels:
                    labels.append(x)
        idx = {x: i for i, x in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)))
        for w, l, n in records:
            if w == l:
                raise ValidationError(f"item {w!r} cannot beat itself")
            counts[idx[w], idx[l]] += n
        return cls(tuple(labels), counts)

    @classmethod
    def from_csv(cls, text: str) -> "VoteMatrix":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["winner", "loser", "count"]:
            raise FormatError("votes CSV must start with header winner,loser,count")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                w, l, n = row
                n = int(n)
            except ValueError as exc:
                raise FormatError(f"votes CSV line {lineno}: {exc}") from exc
            if n < 0:
                raise FormatError(f"votes CSV line {lineno}: negative count")
            records.append((w.strip(), l.strip(), n))
        return cls.from_records(records)

    @classmethod
    def load(cls, path: str | Path) -> "VoteMatrix":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))

    def to_csv(self) -> str:
        lines = ["winner,loser,count"]
        for i, w in enumerate(self.items):
            for j, l in enumerate(self.items):
                if self.counts[i, j]:
                    lines.append(f"{w},{l},{int(self.counts[i, j])}")
        return "\n".join(lines) + "\n"


@dataclass
class Potentials:
    items: tuple[str, ...]
    beta: np.ndarray
    reference: int
    converged: bool
    iterations: int
    loglik_trace: list[float] = field(default_factory=list)
    pseudo_count: float = 0.0

    def __getitem__(self, item: str) -> float:
        return float(self.beta[self.items.index(item)])

    def ranking(self) -> list[str]:
        return [self.items[i] for i in np.argsort(-self.beta, kind="stable")]

    def probability_matrix(self) -> np.ndarray:
        return bt_prob(self.beta[:, None], self.beta[None, :])

    def to_dict(self) -> dict:
        P = self.probability_matrix()
        return {
            "items": list(self.items),
            "reference": self.items[self.reference],
            "potentials": {x: float(b) for x, b in zip(self.items, self.beta)},
            "ranking": self.ranking(),
            "p_beats": {x: {y: float(P[i, j]) for j, y in enumerate(self.items)} for i, x in enumerate(self.items)},
            "converged": self.converged,
            "iterations": self.iterations,
            "pseudo_count": self.pseudo_count,
            "regularized": self.pseudo_count > 0,
        }


def bt_prob(beta_i, beta_j):
    """Probability that i beats j, computed as a logistic of the difference.

    Strictly inside (0, 1) while ``|beta_i - beta_j|`` stays below about 36,
    beyond which double precision rounds it to exactly 0 or 1.
    """
    d = np.asarray(beta_i, dtype=float) - np.asarray(beta_j, dtype=float)
    out = 0.5 * (1 + np.tanh(0.5 * d))
    return float(out) if out.ndim == 0 else out


def log_likelihood(counts: np.ndarray, beta: np.ndarray) -> float:
    d = beta[:, None] - beta[None, :]
    # log P(i > j) = -log(1 + exp(-(b_i - b_j)))
    logp = -np.logaddexp(0.0, -d)
    mask = counts > 0
    return float(np.sum(counts[mask] * logp[mask]))


def check_identifiable(votes: VoteMatrix) -> None:
    c = votes.counts
    n = len(votes.items)
    undirected = csr_matrix((c + c.T) > 0)
    k, labels = connected_components(undirected, directed=False)
    if k > 1:
        comps = [[votes.items[i] for i in range(n) if labels[i] == g] for g in range(k)]
        raise ValidationError(f"comparison graph is disconnected; components: {comps}")
    wins, losses = c.sum(axis=1), c.sum(axis=0)
    for i, item in enumerate(votes.items):
        if wins[i] == 0:
            raise ValidationError(f"item {item!r} never wins; its potential diverges to -inf")
        if losses[i] == 0:
            raise ValidationError(f"item {item!r} never loses; its potential diverges to +inf")
    k, labels = connected_components(csr_matrix(c > 0), directed=True, connection="strong")
    if k > 1:
        comps = [[votes.items[i] for i in range(n) if labels[i] == g] for g in range(k)]
        raise ValidationError(f"some group of items never loses to the rest; strongly connected groups: {comps}")


def bt_fit(
    votes: VoteMatrix,
    reference: str | int = 0,
    tol: float = 1e-10,
    max_iterations: int = 100_000,
    pseudo_count: float = 0.0,
) -> Potentials:
    """Maximum-likelihood potentials with ``beta[reference] == 0``.

    ``pseudo_count`` > 0 adds that many votes to every ordered pair before
    fitting (exploratory use; the output is flagged as regularized).
    """
    ref = votes.items.index(reference) if isinstance(reference, str) else int(reference)
    if not 0 <= ref < len(votes.items):
        raise ValidationError(f"reference {reference!r} is not an item")
    c = np.array(votes.counts)
    if pseudo_count:
        if pseudo_count < 0:
            raise ValidationError("pseudo_count must be >= 0")
        c = c + pseudo_count * (1 - np.eye(len(votes.items)))
    else:
        check_identifiable(votes)
    n = c + c.T
    wins = c.sum(axis=1)
    p = np.ones(len(votes.items))
    beta = np.zeros_like(p)
    trace = [log_likelihood(c, beta)]
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        denom = (n / (p[:, None] + p[None, :])).sum(axis=1)
        p = wins / denom
        p /= p[ref]
        new_beta = np.log(p)
        if not np.all(np.isfinite(new_beta)):
            raise NumericalError(f"potentials diverged at iteration {it}")
        trace.append(log_likelihood(c, new_beta))
        step = float(np.max(np.abs(new_beta - beta)))
        beta = new_beta
        if step < tol:
            converged = True
            break
    beta = beta - beta[ref]
    return Potentials(votes.items, beta, ref, converged, it, trace, float(pseudo_count))


def simulate_votes(beta: Sequence[float], votes_per_pair: int, rng: np.random.Generator, items: Sequence[str] | None = None) -> VoteMatrix:
    """Draw ``votes_per_pair`` Bradley-Terry outcomes for every unordered pair."""
    beta = np.asarray(beta, dtype=float)
    k = beta.size
    counts = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            w = rng.binomial(votes_per_pair, bt_prob(beta[i], beta[j]))
            counts[i, j] += w
            counts[j, i] += votes_per_pair - w
    return VoteMatrix(tuple(items) if items else tuple(f"item{i}" for i in range(k)), counts)
