"""Command-line entry point: ``maxent-expr <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure. Every command writes ``<output>.manifest.json`` next to
its main output with the full configuration, input digests and version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path


from . import __version__
from .data_model import (
    Corpus,
    Topology,
    Tune,
    dumps_dataset,
    load_dataset,
    read_raw_jsonl,
    validate_corpus,
)
from .errors import FormatError, NumericalError, ValidationError
from .evaluation import frequency_scatter, loocv
from .model_core import load_model, save_model
from .observables import ObservableVector, observable_distance, observable_vector, scatter_csv, scatter_rows
from .ranking import VoteMatrix, bt_fit
from .sampler import GenerationConfig, generate, random_baseline
from .training import TrainConfig, fit

OUT_DIR_ENV = "MAXENT_EXPR_OUT"

log = logging.getLogger("maxent_expr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_path(args, given: str | None, default_name: str) -> Path:
    if given:
        p = Path(given)
        return p if p.is_absolute() or args.out_dir is None else Path(args.out_dir) / p
    return Path(args.out_dir or os.environ.get(OUT_DIR_ENV, ".")) / default_name


def _write(path: Path, text: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text, encoding="utf-8")


def _manifest(path: Path, command: str, args, inputs: list[str], outputs: list[Path], extra: dict | None = None) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}
    doc = {
        "tool": "maxent-expr",
        "version": __version__,
        "command": command,
        "config": config,
        "output_dir": str(path.parent.resolve()),
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": {str(p): _digest(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    _write(Path(str(path) + ".manifest.json"), json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        l2_strength=args.l2,
        step_size=args.step_size,
        max_iterations=args.max_iter,
        grad_tolerance=args.grad_tol,
        loss_rel_tolerance=args.loss_tol,
        seed=args.seed,
        method=args.optimizer,
    )


def _load_corpus_with_ranges(path: str, args) -> Corpus:
    corpus = load_dataset(path)
    topo = corpus.topology
    k_hor = args.k_hor if getattr(args, "k_hor", None) is not None else topo.k_hor
    k_diag = args.k_diag if getattr(args, "k_diag", None) is not None else topo.k_diag
    return corpus.with_topology(topo.with_ranges(k_hor, k_diag))


def _observables_from(path: str, args) -> tuple[ObservableVector, Corpus | None]:
    text = Path(path).read_text(encoding="utf-8")
    if text.startswith("label,value,weight"):
        return ObservableVector.from_csv(text), None
    corpus = _load_corpus_with_ranges(path, args)
    return observable_vector(corpus, corpus.topology), corpus


# -- commands -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tunes = read_raw_jsonl(args.raw, Q=args.Q)
    for w in caught:
        log.warning("%s", w.message)
    topo = Topology.expression(args.Q, args.k_hor, args.k_diag)
    corpus = Corpus(args.style, tuple(tunes), topo)
    report = validate_corpus(corpus, check_bounds=True)
    out = _out_path(args, args.output, "dataset.json")
    _write(out, dumps_dataset(corpus))
    _manifest(out, "ingest", args, [args.raw], [out], {"report": report})
    print(json.dumps(report, indent=1))
    return 0


def cmd_train(args) -> int:
    corpus = _load_corpus_with_ranges(args.dataset, args)
    validate_corpus(corpus, check_bounds=False)
    params, report = fit(corpus, corpus.topology, _train_config(args))
    out = _out_path(args, args.output, "model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(params, out)
    rep_path = out.with_suffix(".report.json")
    trace_path = out.with_suffix(".trace.csv")
    summary = {k: v for k, v in report.to_dict().items() if k not in ("loss_trace", "grad_norm_trace")}
    summary["final_grad_norm"] = report.grad_norm_trace[-1] if report.grad_norm_trace else None
    _write(rep_path, json.dumps(summary, indent=1) + "\n")
    _write(trace_path, report.trace_csv())
    _manifest(out, "train", args, [args.dataset], [out, rep_path, trace_path])
    print(json.dumps(summary, indent=1))
    return 0


def _clamp_from(path: str, tune_id: str | None) -> Tune:
    corpus = load_dataset(path)
    if tune_id is None:
        return corpus.tunes[0]
    for t in corpus.tunes:
        if t.id == tune_id:
            return t
    raise ValidationError(f"clamp file has no tune {tune_id!r}")


def cmd_generate(args) -> int:
    params = load_model(args.model)
    topo = params.topology
    length = args.length
    clamps = {}
    bar_length = 4.0
    inputs = [args.model]
    if args.clamp_score:
        score = _clamp_from(args.clamp_score, args.clamp_tune)
        inputs.append(args.clamp_score)
        if score.values.shape[0] != topo.n_voices:
            raise ValidationError("clamp file voices do not match the model")
        length = score.n_notes
        bar_length = score.bar_length
        clamps = {v: score.values[v] for v, voice in enumerate(topo.voices) if voice.discrete}
    config = GenerationConfig(length, args.sweeps, args.seed, clamps, args.monitor_stride)
    reference = None
    if args.reference:
        reference, _ = _observables_from(args.reference, argparse.Namespace(k_hor=topo.k_hor, k_diag=topo.k_diag))
        inputs.append(args.reference)
    if args.random_baseline:
        seq = random_baseline(params, config)
        trace = None
    else:
        seq, trace = generate(params, config, reference)
    out = _out_path(args, args.output, "sequence.json")
    corpus = Corpus(
        params.metadata.get("style", ""), (Tune("generated", bar_length, seq),), topo
    )
    _write(out, dumps_dataset(corpus, {"source": "random-baseline" if args.random_baseline else "generated"}))
    outputs = [out]
    if trace is not None and trace.iterations:
        tpath = out.with_suffix(".trace.csv")
        _write(tpath, trace.to_csv())
        outputs.append(tpath)
    _manifest(out, "generate", args, inputs, outputs)
    print(f"wrote {out} ({length} notes)")
    return 0


def cmd_stats(args) -> int:
    vec, _ = _observables_from(args.input, args)
    out = _out_path(args, args.output, "observables.csv")
    _write(out, vec.to_csv())
    _manifest(out, "stats", args, [args.input], [out])
    print(f"wrote {out} ({len(vec)} entries)")
    return 0


def cmd_compare(args) -> int:
    a, _ = _observables_from(args.a, args)
    b, _ = _observables_from(args.b, args)
    dist = observable_distance(a, b)
    out = _out_path(args, args.output, "scatter.csv")
    _write(out, scatter_csv(scatter_rows(a, b)))
    _manifest(out, "compare", args, [args.a, args.b], [out], {"distance": dist, "distance_metric": "rms"})
    print(json.dumps({"distance": dist, "distance_metric": "rms", "entries": len(a)}))
    return 0


def cmd_scatter(args) -> int:
    params = load_model(args.model)
    corpus = load_dataset(args.dataset).with_topology(params.topology)
    res = frequency_scatter(params, corpus, args.length, args.seed, args.sweeps)
    out = _out_path(args, args.output, "scatter.csv")
    _write(out, scatter_csv(res.rows + res.bins))
    _manifest(out, "scatter", args, [args.model, args.dataset], [out], {"summary": res.summary()})
    print(json.dumps(res.summary()))
    return 0


def cmd_eval(args) -> int:
    corpus = _load_corpus_with_ranges(args.dataset, args)
    validate_corpus(corpus, check_bounds=False)
    report = loocv(corpus, corpus.topology, _train_config(args))
    out = _out_path(args, args.output, "eval.json")
    _write(out, json.dumps(report.to_dict(), indent=1) + "\n")
    _manifest(out, "eval", args, [args.dataset], [out])
    print(report.table())
    return 0


def cmd_rank(args) -> int:
    votes = VoteMatrix.load(args.votes)
    ref = args.reference if args.reference is not None else votes.items[0]
    if ref not in votes.items:
        raise ValidationError(f"reference {ref!r} is not among the items {list(votes.items)}")
    pot = bt_fit(votes, ref, pseudo_count=args.pseudo_count)
    if not pot.converged:
        raise NumericalError(f"Bradley-Terry iterations did not converge in {pot.iterations} steps")
    out = _out_path(args, args.output, "potentials.json")
    doc = pot.to_dict()
    _write(out, json.dumps(doc, indent=1) + "\n")
    _manifest(out, "rank", args, [args.votes], [out])
    print(json.dumps({"potentials": doc["potentials"], "ranking": doc["ranking"]}, indent=1))
    return 0


# -- parser ----------------------------------------------------------------------


def _add_ranges(p, default_hor=None, default_diag=None):
    p.add_argument("--k-hor", type=_positive_int, default=default_hor, help="horizontal range in notes")
    p.add_argument("--k-diag", type=_positive_int, default=default_diag, help="diagonal range in notes")


def _add_train_flags(p):
    p.add_argument("--l2", type=float, default=1e-4, help="L2 strength on fields and couplings")
    p.add_argument("--step-size", type=float, default=0.05, help="initial step (rprop optimizer)")
    p.add_argument("--max-iter", type=_positive_int, default=5000)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--loss-tol", type=float, default=1e-9)
    p.add_argument("--optimizer", choices=("lbfgs", "rprop"), default="lbfgs")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maxent-expr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or .)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert raw note records into a dataset")
    p.add_argument("raw", help="JSON Lines file, one tune per line")
    p.add_argument("--Q", type=int, default=8, help="metrical slots per bar")
    p.add_argument("--style", default="")
    p.add_argument("-o", "--output")
    _add_ranges(p, 3, 1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit a model by pseudo-likelihood")
    p.add_argument("dataset")
    p.add_argument("-o", "--output")
    _add_ranges(p, 3, 1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a sequence from a model")
    p.add_argument("model")
    p.add_argument("-o", "--output")
    p.add_argument("--length", type=_positive_int, default=10000)
    p.add_argument("--sweeps", type=float, default=10.0, help="updates per free variable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clamp-score", help="dataset whose discrete voices are held fixed")
    p.add_argument("--clamp-tune", help="tune id inside the clamp file (default: first)")
    p.add_argument("--random-baseline", action="store_true", help="independent draws from corpus marginals")
    p.add_argument("--reference", help="observables CSV or dataset to monitor the distance against")
    p.add_argument("--monitor-stride", type=_positive_int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="compute the observable vector of a dataset or sequence")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _add_ranges(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("compare", help="scatter table and distance between two inputs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("-o", "--output")
    _add_ranges(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("scatter", help="generate from a model and compare with its corpus")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("-o", "--output")
    p.add_argument("--length", type=_positive_int, default=10000)
    p.add_argument("--sweeps", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("eval", help="leave-one-tune-out predictive R2")
    p.add_argument("dataset")
    p.add_argument("-o", "--output")
    _add_ranges(p, 3, 1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="Bradley-Terry potentials from votes")
    p.add_argument("votes", help="CSV with header winner,loser,count")
    p.add_argument("--reference", help="item pinned to potential 0 (default: first item)")
    p.add_argument("--pseudo-count", type=float, default=0.0, help="votes added to every ordered pair")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FormatError, ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
