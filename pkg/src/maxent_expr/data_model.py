"""Sequence and corpus types, note ingestion, and training-window extraction.

A tune is stored as a ``(n_voices, N)`` float array. Discrete voices hold
integer-valued category indices; continuous voices hold real values. The
canonical layout produced by :func:`ingest_tune` has four voices: the
metrical slot (discrete), onset deviation, duration deviation and loudness.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, QuantizationWarning, ShortTuneWarning, ValidationError

DATASET_FORMAT = "maxent-expr-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class Voice:
    """One observable stream. ``Q`` is the category count, ``None`` for continuous."""

    name: str
    Q: int | None = None
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.Q is not None and (int(self.Q) != self.Q or self.Q < 2):
            raise ValidationError(f"voice {self.name!r}: discrete voices need Q >= 2, got {self.Q}")
        if self.Q is not None and self.bounds is not None:
            raise ValidationError(f"voice {self.name!r}: bounds only apply to continuous voices")

    @property
    def discrete(self) -> bool:
        return self.Q is not None

    def to_dict(self) -> dict:
        d: dict = {"name": self.name, "kind": "discrete" if self.discrete else "continuous"}
        if self.discrete:
            d["Q"] = self.Q
        if self.bounds is not None:
            d["bounds"] = list(self.bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Voice":
        kind = d.get("kind")
        if kind == "discrete":
            return cls(str(d["name"]), Q=int(d["Q"]))
        if kind == "continuous":
            b = d.get("bounds")
            return cls(str(d["name"]), bounds=None if b is None else (float(b[0]), float(b[1])))
        raise FormatError(f"unknown voice kind {kind!r}")


@dataclass(frozen=True)
class Topology:
    """Voice layout plus the horizontal and diagonal interaction ranges."""

    voices: tuple[Voice, ...]
    k_hor: int = 3
    k_diag: int = 1

    def __post_init__(self):
        object.__setattr__(self, "voices", tuple(self.voices))
        if not self.voices:
            raise ValidationError("topology needs at least one voice")
        if int(self.k_hor) != self.k_hor or self.k_hor < 1:
            raise ValidationError(f"k_hor must be a positive integer, got {self.k_hor}")
        if int(self.k_diag) != self.k_diag or self.k_diag < 1:
            raise ValidationError(f"k_diag must be a positive integer, got {self.k_diag}")
        names = [v.name for v in self.voices]
        if len(set(names)) != len(names):
            raise ValidationError(f"voice names must be unique, got {names}")

    @property
    def n_voices(self) -> int:
        return len(self.voices)

    @property
    def voice_kinds(self) -> list[int | None]:
        return [v.Q for v in self.voices]

    @property
    def half_width(self) -> int:
        return max(self.k_hor, self.k_diag)

    def with_ranges(self, k_hor: int, k_diag: int) -> "Topology":
        return Topology(self.voices, k_hor, k_diag)

    def to_dict(self) -> dict:
        return {"voices": [v.to_dict() for v in self.voices], "k_hor": self.k_hor, "k_diag": self.k_diag}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        try:
            return cls(tuple(Voice.from_dict(v) for v in d["voices"]), int(d["k_hor"]), int(d["k_diag"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed topology block: {exc}") from exc

    @classmethod
    def expression(cls, Q: int = 8, k_hor: int = 3, k_diag: int = 1) -> "Topology":
        """The four-voice layout used for performance data."""
        return cls(
            (
                Voice("slot", Q=Q),
                Voice("onset"),
                Voice("duration"),
                Voice("loudness", bounds=(0.0, 1.0)),
            ),
            k_hor,
            k_diag,
        )


@dataclass(frozen=True)
class RawNote:
    score_onset: float
    score_duration: float
    perf_onset: float
    perf_duration: float
    velocity: int

    @classmethod
    def from_dict(cls, d: dict) -> "RawNote":
        return cls(
            float(d["score_onset"]),
            float(d["score_duration"]),
            float(d["perf_onset"]),
            float(d["perf_duration"]),
            int(d["velocity"]),
        )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Tune:
    """A multi-voice note sequence. ``values[v, n]`` is voice ``v`` at note ``n``."""

    id: str
    bar_length: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValidationError(f"tune {self.id!r}: values must be 2-D (voices, notes)")
        object.__setattr__(self, "values", _readonly(vals))
        if not self.bar_length > 0:
            raise ValidationError(f"tune {self.id!r}: bar_length must be > 0")

    @property
    def n_notes(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n_notes

    def __eq__(self, other):
        if not isinstance(other, Tune):
            return NotImplemented
        return (
            self.id == other.id
            and self.bar_length == other.bar_length
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    def validate(self, topology: Topology, check_bounds: bool = True) -> None:
        if self.values.shape[0] != topology.n_voices:
            raise ValidationError(
                f"tune {self.id!r}: has {self.values.shape[0]} voices, topology expects {topology.n_voices}"
            )
        for v, voice in enumerate(topology.voices):
            row = self.values[v]
            if not np.all(np.isfinite(row)):
                raise ValidationError(f"tune {self.id!r}: voice {voice.name!r} has non-finite values")
            if voice.discrete:
                if np.any(row != np.round(row)) or np.any(row < 0) or np.any(row >= voice.Q):
                    raise ValidationError(
                        f"tune {self.id!r}: voice {voice.name!r} needs integer categories in [0, {voice.Q})"
                    )
            elif check_bounds and voice.bounds is not None:
                lo, hi = voice.bounds
                bad = np.flatnonzero((row < lo) | (row > hi))
                if bad.size:
                    raise ValidationError(
                        f"tune {self.id!r}: voice {voice.name!r} value {row[bad[0]]!r} at note {bad[0]} "
                        f"outside [{lo}, {hi}]"
                    )

    def to_dict(self, topology: Topology) -> dict:
        voices = []
        for v, voice in enumerate(topology.voices):
            row = self.values[v]
            voices.append([int(x) for x in row] if voice.discrete else [float(x) for x in row])
        return {"id": self.id, "bar_length": float(self.bar_length), "voices": voices}

    @classmethod
    def from_dict(cls, d: dict) -> "Tune":
        try:
            voices = d["voices"]
            lengths = {len(r) for r in voices}
            if len(lengths) > 1:
                raise FormatError(f"tune {d.get('id')!r}: voices have unequal lengths {sorted(lengths)}")
            return cls(str(d["id"]), float(d["bar_length"]), np.array(voices, dtype=float).reshape(len(voices), -1))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise FormatError(f"malformed tune record: {exc}") from exc


@dataclass(frozen=True)
class Corpus:
    style: str
    tunes: tuple[Tune, ...]
    topology: Topology

    def __post_init__(self):
        object.__setattr__(self, "tunes", tuple(self.tunes))

    def __len__(self) -> int:
        return len(self.tunes)

    def with_topology(self, topology: Topology) -> "Corpus":
        return Corpus(self.style, self.tunes, topology)

    def without(self, tune_id: str) -> "Corpus":
        return Corpus(self.style, tuple(t for t in self.tunes if t.id != tune_id), self.topology)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def metrical_slot(score_onset: float, bar_length: float, Q: int) -> tuple[int, float]:
    """Nearest slot on a Q-step bar grid and the distance to it in grid steps."""
    step = bar_length / Q
    pos = math.fmod(score_onset, bar_length)
    if pos < 0:
        pos += bar_length
    offset = pos / step
    # snap float noise on exact grid points (e.g. 5.999999999999999)
    nearest = round(offset)
    if abs(offset - nearest) < 1e-9:
        offset = float(nearest)
    slot = _round_half_up(offset)
    return slot % Q, abs(offset - slot)


def ingest_tune(
    raw: Sequence[RawNote],
    bar_length: float,
    Q: int = 8,
    tune_id: str = "tune",
    grid_tolerance: float = 0.5,
) -> Tune:
    """Convert score/performance note pairs into the four expression voices.

    Notes are stably sorted by score onset. Onset and duration deviations are
    normalized by the notated duration; velocity is divided by 127.
    """
    if not raw:
        raise ValidationError(f"tune {tune_id!r}: no notes")
    if not bar_length > 0:
        raise ValidationError(f"tune {tune_id!r}: bar_length must be > 0")
    for i, note in enumerate(raw):
        if not note.score_duration > 0:
            raise ValidationError(f"tune {tune_id!r}: note {i} has nonpositive score_duration {note.score_duration}")
        if note.perf_duration < 0:
            raise ValidationError(f"tune {tune_id!r}: note {i} has negative perf_duration {note.perf_duration}")
        if not 0 <= note.velocity <= 127:
            raise ValidationError(f"tune {tune_id!r}: note {i} velocity {note.velocity} outside [0, 127]")
    order = sorted(range(len(raw)), key=lambda i: raw[i].score_onset)
    values = np.empty((4, len(raw)))
    for n, i in enumerate(order):
        note = raw[i]
        slot, dist = metrical_slot(note.score_onset, bar_length, Q)
        if dist > grid_tolerance:
            warnings.warn(
                f"tune {tune_id!r}: note {i} onset {note.score_onset} is {dist:.3f} grid steps off slot {slot}",
                QuantizationWarning,
                stacklevel=2,
            )
        values[0, n] = slot
        values[1, n] = (note.perf_onset - note.score_onset) / note.score_duration
        values[2, n] = (note.perf_duration - note.score_duration) / note.score_duration
        values[3, n] = note.velocity / 127
    return Tune(tune_id, bar_length, values)


@dataclass(frozen=True)
class Window:
    """One neighborhood-complete slice. ``values[v, w + d]`` is voice v at offset d."""

    values: np.ndarray
    tune_id: str
    center: int

    @property
    def half_width(self) -> int:
        return (self.values.shape[1] - 1) // 2

    def at(self, voice: int, offset: int) -> float:
        return float(self.values[voice, self.half_width + offset])


@dataclass(frozen=True, eq=False)
class WindowSet:
    """A batch of windows stored as a ``(M, n_voices, 2w + 1)`` array."""

    values: np.ndarray
    tune_ids: tuple[str, ...]
    centers: np.ndarray
    half_width: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> Window:
        return Window(self.values[i], self.tune_ids[i], int(self.centers[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def column(self, voice: int, offset: int) -> np.ndarray:
        return self.values[:, voice, self.half_width + offset]

    @classmethod
    def empty(cls, n_voices: int, half_width: int) -> "WindowSet":
        return cls(np.empty((0, n_voices, 2 * half_width + 1)), (), np.empty(0, dtype=int), half_width)

    @classmethod
    def concat(cls, sets: Iterable["WindowSet"], n_voices: int, half_width: int) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty(n_voices, half_width)
        if any(s.half_width != half_width for s in sets):
            raise ValidationError("cannot pool windows of different half-widths")
        return cls(
            np.concatenate([s.values for s in sets]),
            tuple(t for s in sets for t in s.tune_ids),
            np.concatenate([s.centers for s in sets]),
            half_width,
        )


def extract_windows(tune: Tune, topology: Topology) -> WindowSet:
    """All windows of a tune whose full neighborhood lies inside it.

    A tune of N notes yields ``max(0, N - 2w)`` windows centered at
    ``w .. N - w - 1`` where ``w = max(k_hor, k_diag)``.
    """
    w = topology.half_width
    N = tune.n_notes
    M = max(0, N - 2 * w)
    if M == 0:
        warnings.warn(f"tune {tune.id!r}: {N} notes yield no window of half-width {w}", ShortTuneWarning, stacklevel=2)
        return WindowSet.empty(topology.n_voices, w)
    view = np.lib.stride_tricks.sliding_window_view(tune.values, 2 * w + 1, axis=1)
    vals = np.ascontiguousarray(view.transpose(1, 0, 2))
    return WindowSet(vals, (tune.id,) * M, np.arange(w, N - w), w)


def corpus_windows(corpus: Corpus, topology: Topology | None = None) -> WindowSet:
    topology = topology or corpus.topology
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortTuneWarning)
        sets = [extract_windows(t, topology) for t in corpus.tunes]
    return WindowSet.concat(sets, topology.n_voices, topology.half_width)


def validate_corpus(corpus: Corpus, check_bounds: bool = True) -> dict:
    """Check every tune against the shared topology and summarize the corpus."""
    if not corpus.tunes:
        raise ValidationError("corpus has no tunes")
    topo = corpus.topology
    ids = [t.id for t in corpus.tunes]
    if len(set(ids)) != len(ids):
        raise ValidationError("tune ids must be unique")
    for t in corpus.tunes:
        t.validate(topo, check_bounds=check_bounds)
    w = topo.half_width
    ranges = {}
    for v, voice in enumerate(topo.voices):
        row = np.concatenate([t.values[v] for t in corpus.tunes])
        ranges[voice.name] = [float(row.min()), float(row.max())]
    per_tune = {t.id: max(0, t.n_notes - 2 * w) for t in corpus.tunes}
    short = [tid for tid, m in per_tune.items() if m == 0]
    if short:
        warnings.warn(f"tunes yielding no windows: {short}", ShortTuneWarning, stacklevel=2)
    return {
        "style": corpus.style,
        "tunes": len(corpus.tunes),
        "notes": int(sum(t.n_notes for t in corpus.tunes)),
        "windows": int(sum(per_tune.values())),
        "half_width": w,
        "value_ranges": ranges,
    }


# -- file formats ------------------------------------------------------------


def read_raw_jsonl(path: str | Path, Q: int = 8) -> list[Tune]:
    """Parse the raw note format: one JSON object per line, one line per tune."""
    tunes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                notes = [RawNote.from_dict(n) for n in rec["notes"]]
                bar_length = float(rec["bar_length"])
                tid = str(rec["id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            try:
                tunes.append(ingest_tune(notes, bar_length, Q, tune_id=tid))
            except ValidationError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from exc
    return tunes


def dataset_to_dict(corpus: Corpus, extra: dict | None = None) -> dict:
    d = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "style": corpus.style,
        "topology": corpus.topology.to_dict(),
        "tunes": [t.to_dict(corpus.topology) for t in corpus.tunes],
    }
    if extra:
        d.update(extra)
    return d


def dumps_dataset(corpus: Corpus, extra: dict | None = None) -> str:
    # repr-based float output round-trips every double exactly
    return json.dumps(dataset_to_dict(corpus, extra), indent=1) + "\n"


def loads_dataset(text: str, check_bounds: bool = False) -> Corpus:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"dataset is not valid JSON: {exc}") from exc
    if d.get("format") != DATASET_FORMAT:
        raise FormatError(f"not a dataset file (format={d.get('format')!r})")
    if d.get("version") != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {d.get('version')!r}")
    topo = Topology.from_dict(d["topology"])
    corpus = Corpus(str(d.get("style", "")), tuple(Tune.from_dict(t) for t in d["tunes"]), topo)
    for t in corpus.tunes:
        t.validate(topo, check_bounds=check_bounds)
    return corpus


def save_dataset(corpus: Corpus, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(dumps_dataset(corpus, extra), encoding="utf-8")


def load_dataset(path: str | Path, check_bounds: bool = False) -> Corpus:
    return loads_dataset(Path(path).read_text(encoding="utf-8"), check_bounds=check_bounds)
