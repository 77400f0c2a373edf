"""Command-line entry point: ``gapfm train | evaluate | recommend | metrics``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .core import GapfmError, GradedDataset, HyperParams, make_thresholds, rank_items
from .harness import (
    ProtocolConfig,
    RatedValidation,
    ValidationProbe,
    carve_given_n,
    evaluate_rated_ranking,
    evaluate_topn,
)
from .io import IdMap, ModelArchive, export_text, load_csv_triples, load_model, load_movielens_100k, save_model
from .metrics import RankedJudgedList, gap_exact, gp_at_n, gr_at_n, ndcg_at_k, precision_at_k
from .trainer import train

log = logging.getLogger("gapfm")

# training defaults: 10 factors, lambda 0.001, step 1e-5
DEFAULT_DIM = 10
DEFAULT_REG = 0.001
DEFAULT_LR = 1e-5


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("cutoffs must be positive integers")
    return vals


def _select_k(text: str) -> int | str:
    if text == "all":
        return "all"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("K must be a positive integer or 'all'") from None
    if k < 1:
        raise argparse.ArgumentTypeError("K must be a positive integer or 'all'")
    return k


def _workers(text: str) -> int | str:
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("workers must be an integer or 'auto'") from None


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", type=Path, help="ratings file")
    p.add_argument("--format", choices=("movielens", "csv"), default="movielens")
    p.add_argument("--delimiter", default=",", help="field separator for --format csv")
    p.add_argument("--header", action="store_true", help="csv file starts with a header row")


def _add_protocol_args(p: argparse.ArgumentParser, with_given: bool) -> None:
    if with_given:
        p.add_argument("--given", type=int, default=10, help="training ratings per user")
        p.add_argument("--min-train", type=int, default=50, help="drop users with fewer ratings")
        p.add_argument("--validation-fraction", type=float, default=0.015)
    p.add_argument("--min-probe", type=int, default=None, help="minimum probe ratings per evaluated user")
    p.add_argument("--negatives", type=int, default=None, help="sampled unrated items per user")
    p.add_argument("--cutoffs", type=_int_list, default=None, help="e.g. 1,3,5")
    p.add_argument("--threshold", type=int, default=None, help="precision relevance grade (default y_max)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gapfm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on a Given-n split")
    _add_data_args(p)
    _add_protocol_args(p, with_given=True)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--reg", type=float, default=DEFAULT_REG)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--k", type=_select_k, default="all", help="items updated per user per epoch, or 'all'")
    p.add_argument("--selection", choices=("adaptive", "adaptive-tiered", "random"), default="adaptive")
    p.add_argument("--itermax", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_workers, default=1, help="phase-1 threads, or 'auto'")
    p.add_argument("--validate", choices=("none", "topn-gap", "rated-ndcg"), default="none")
    p.add_argument("--early-stopping", action="store_true")
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--restore-best", action="store_true", help="keep the best validation epoch")
    p.add_argument("--telemetry", default=None, help="write per-epoch JSON lines here ('-' for stdout)")
    p.add_argument("--export-text", type=Path, default=None, help="also write a readable JSON dump")
    p.add_argument("-o", "--output", type=Path, required=True, help="model archive path")

    p = sub.add_parser("evaluate", help="score a saved model on its split")
    p.add_argument("model", type=Path)
    _add_data_args(p)
    _add_protocol_args(p, with_given=False)
    p.add_argument("--protocol", choices=("topn", "rated-ranking"), default="topn")
    p.add_argument("--json", action="store_true", help="structured output instead of text")
    p.add_argument("-o", "--output", type=Path, default=None)

    p = sub.add_parser("recommend", help="top-N items for one user")
    p.add_argument("model", type=Path)
    p.add_argument("user", help="external user id")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--exclude", type=Path, default=None, help="ratings file whose items for this user are skipped")
    p.add_argument("--format", choices=("movielens", "csv"), default="movielens")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--header", action="store_true")

    p = sub.add_parser("metrics", help="score ranked grade lists, one list per line")
    p.add_argument("file", type=Path, help="whitespace or comma separated grades, best rank first; 0 = unjudged")
    p.add_argument("--y-max", type=int, default=None, help="grade ceiling (default: largest grade seen)")
    p.add_argument("--cutoff", type=int, default=None, help="list cutoff (default: full list)")
    return parser


def _load_data(args: argparse.Namespace) -> tuple[GradedDataset, IdMap]:
    if args.format == "csv":
        return load_csv_triples(args.data, delimiter=args.delimiter, has_header=args.header)
    return load_movielens_100k(args.data)


@contextlib.contextmanager
def _open_out(target: str | Path | None, stdout: TextIO):
    if target is None:
        yield None
    elif str(target) == "-":
        yield stdout
    else:
        with open(target, "w", encoding="utf-8") as fh:
            yield fh


def _protocol_from_args(args: argparse.Namespace, base: dict | None = None) -> ProtocolConfig:
    cfg = dict(base or {})
    if "given" in args:
        cfg.update(
            given_n=args.given,
            min_train_ratings=args.min_train,
            validation_fraction=args.validation_fraction,
            seed=args.seed,
        )
    for key, value in (
        ("min_probe_ratings", args.min_probe),
        ("negatives_per_user", args.negatives),
        ("eval_cutoffs", args.cutoffs),
        ("precision_threshold", args.threshold),
    ):
        if value is not None:
            cfg[key] = value
    if "eval_cutoffs" in cfg:
        cfg["eval_cutoffs"] = tuple(cfg["eval_cutoffs"])
    return ProtocolConfig(**cfg)


def _cmd_train(args: argparse.Namespace, stdout: TextIO) -> int:
    dataset, ids = _load_data(args)
    config = _protocol_from_args(args)
    bundle = carve_given_n(dataset, config)
    hyper = HyperParams(
        dim=args.dim,
        reg=args.reg,
        learn_rate=args.lr,
        select_k=args.k,
        itermax=args.itermax,
        seed=args.seed,
        parallelism=args.workers,
        selection=args.selection,
        early_stopping=args.early_stopping,
        patience=args.patience,
        restore_best=args.restore_best,
    )
    validation = None
    if args.validate == "topn-gap":
        validation = ValidationProbe(bundle)
    elif args.validate == "rated-ndcg":
        validation = RatedValidation(bundle)
    thresholds = make_thresholds(dataset.y_max)
    with _open_out(args.telemetry, stdout) as tele:
        result = train(bundle.train, thresholds, hyper, validation=validation, telemetry=tele)
    last = result.telemetry[-1]
    # summary only: wall-clock timings would break byte-stable archives
    summary = {
        "epochs": result.state.t,
        "final_objective": last.objective,
        "final_validation": last.validation_gap,
        "best_iteration": result.state.best_iteration,
    }
    hyper_doc = {
        "dim": hyper.dim,
        "reg": hyper.reg,
        "learn_rate": hyper.learn_rate,
        "select_k": hyper.select_k,
        "itermax": hyper.itermax,
        "selection": hyper.selection,
        "early_stopping": hyper.early_stopping,
        "patience": hyper.patience,
        "restore_best": hyper.restore_best,
    }
    archive = ModelArchive(result.model, dataset.y_max, ids, hyper_doc, hyper.seed, config.to_dict(), summary)
    save_model(archive, args.output)
    if args.export_text is not None:
        export_text(archive, args.export_text)
    log.info("saved %s after %d epochs", args.output, result.state.t)
    return 0


def _cmd_evaluate(args: argparse.Namespace, stdout: TextIO) -> int:
    archive = load_model(args.model)
    if archive.protocol is None:
        raise GapfmError("archive carries no protocol settings; cannot rebuild its split")
    dataset, ids = _load_data(args)
    if ids.users != archive.ids.users or ids.items != archive.ids.items:
        raise GapfmError("ratings file does not match the id tables stored in the model")
    config = _protocol_from_args(args, archive.protocol)
    bundle = carve_given_n(dataset, config)
    archive.model.check_compatible(bundle.train)
    if args.protocol == "topn":
        report = evaluate_topn(archive.model, bundle, config)
    else:
        report = evaluate_rated_ranking(archive.model, bundle, config)
    text = report.to_json() + "\n" if args.json else report.to_text()
    if args.output is None:
        stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    return 0


def _cmd_recommend(args: argparse.Namespace, stdout: TextIO) -> int:
    if args.n < 1:
        raise GapfmError("-n must be positive")
    archive = load_model(args.model)
    m = archive.ids.user_index(args.user)
    candidates = np.arange(archive.model.num_items)
    if args.exclude is not None:
        args.data = args.exclude
        dataset, ids = _load_data(args)
        if args.user in ids.users:
            seen = {ids.items[i] for i in dataset.user_items(ids.user_index(args.user)).tolist()}
            keep = [k for k, ext in enumerate(archive.ids.items) if ext not in seen]
            candidates = np.array(keep, dtype=np.int64)
    scores = archive.model.scores(m, candidates)
    order = np.argsort(rank_items(scores))[: args.n]
    for rank, pos in enumerate(order.tolist(), start=1):
        stdout.write(f"{rank}\t{archive.ids.items[candidates[pos]]}\t{float(scores[pos])!r}\n")
    return 0


def _parse_grade_lines(path: Path) -> list[tuple[int, list[int]]]:
    out = []
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].replace(",", " ").split()
        if not line:
            continue
        try:
            grades = [int(tok) for tok in line]
        except ValueError:
            raise GapfmError(f"line {n}: grades must be integers") from None
        if min(grades) < 0:
            raise GapfmError(f"line {n}: grades must be >= 0")
        out.append((n, grades))
    if not out:
        raise GapfmError("no ranked lists found")
    return out


def _fmt(value: float | None) -> str:
    return "undefined" if value is None else repr(float(value))


def _cmd_metrics(args: argparse.Namespace, stdout: TextIO) -> int:
    rows = _parse_grade_lines(args.file)
    y_max = args.y_max or max(max(g) for _, g in rows)
    if y_max < 1 or max(max(g) for _, g in rows) > y_max:
        raise GapfmError(f"grades must lie in 0..{y_max}")
    thresholds = make_thresholds(y_max)
    stdout.write("line\tGAP\tNDCG\tP\tGP\tGR\n")
    for n, grades in rows:
        lst = RankedJudgedList.from_grades(grades)
        k = args.cutoff or len(lst)
        cells = [
            gap_exact(lst, thresholds, k),
            ndcg_at_k(lst, k),
            precision_at_k(lst, k, y_max),
            gp_at_n(lst, thresholds, k),
            gr_at_n(lst, thresholds, k),
        ]
        stdout.write(f"{n}\t" + "\t".join(_fmt(c) for c in cells) + "\n")
    return 0


_COMMANDS = {"train": _cmd_train, "evaluate": _cmd_evaluate, "recommend": _cmd_recommend, "metrics": _cmd_metrics}


def main(argv: Sequence[str] | None = None, stdout: TextIO | None = None) -> int:
    """Run one subcommand.  Returns 0 on success, 1 on runtime failure.

    Usage errors raise ``SystemExit(2)`` from argparse.
    """
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args, stdout)
    except (GapfmError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"gapfm {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
