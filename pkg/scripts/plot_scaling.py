"""Render the three scaling figures from per-epoch telemetry files.

``collect`` runs seeded synthetic training and writes the line-delimited
telemetry the CLI also emits (``gapfm train --telemetry``); ``plot`` reads a
directory of such files and draws:

* ``curve.png``: validation GAP@5 against iteration,
* ``workers.png``: user-phase time against worker count,
* ``size.png``: mean epoch time against the number of ratings.

File naming: ``curve_<label>.jsonl``, ``workers_<n>.jsonl``, ``size_<ratings>.jsonl``.

Usage::

    python scripts/plot_scaling.py collect out/
    python scripts/plot_scaling.py plot out/
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def read_telemetry(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _write(path: Path, records) -> None:
    path.write_text("".join(r.to_json() + "\n" for r in records))


def collect(out: Path, epochs: int) -> None:
    from gapfm.core import HyperParams, make_thresholds
    from gapfm.harness import ProtocolConfig, ValidationProbe, carve_given_n
    from gapfm.synthetic import make_synthetic
    from gapfm.trainer import train

    out.mkdir(parents=True, exist_ok=True)
    t5 = make_thresholds(5)
    # compile kernels before anything is timed
    train(make_synthetic(20, 30, (5, 10)), t5, HyperParams(itermax=1, select_k=3))

    ds = make_synthetic(500, 300, seed=0)
    bundle = carve_given_n(ds, ProtocolConfig(given_n=20, negatives_per_user=100, seed=0))
    for label, k in (("all", "all"), ("k20", 20)):
        res = train(bundle.train, t5, HyperParams(itermax=epochs, learn_rate=0.01, select_k=k), validation=ValidationProbe(bundle))
        _write(out / f"curve_{label}.jsonl", [res.initial] + res.telemetry)

    for workers in (1, 2, 4, 8):
        res = train(ds, t5, HyperParams(itermax=5, learn_rate=0.01, parallelism=workers), track_objective=False)
        _write(out / f"workers_{workers}.jsonl", res.telemetry[1:])

    for users in (1000, 2000, 4000, 8000):
        grown = make_synthetic(users, 500, ratings_per_user=40, seed=users)
        res = train(grown, t5, HyperParams(itermax=4, learn_rate=0.01), track_objective=False)
        _write(out / f"size_{grown.n_entries}.jsonl", res.telemetry[1:])


def _suffix(path: Path) -> str:
    return path.stem.split("_", 1)[1]


def plot(src: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = sorted(src.glob("curve_*.jsonl"))
    if curves:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for path in curves:
            recs = read_telemetry(path)
            ax.plot([r["iteration"] for r in recs], [r["validation_gap"] for r in recs], label=_suffix(path))
        ax.set_xlabel("iteration")
        ax.set_ylabel("validation GAP@5")
        ax.legend()
        fig.tight_layout()
        fig.savefig(src / "curve.png", dpi=120)

    workers = sorted(src.glob("workers_*.jsonl"), key=lambda p: int(_suffix(p)))
    if workers:
        xs = [int(_suffix(p)) for p in workers]
        ys = [np.median([r["u_ms"] for r in read_telemetry(p)]) for p in workers]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel("workers")
        ax.set_ylabel("user phase (ms)")
        fig.tight_layout()
        fig.savefig(src / "workers.png", dpi=120)

    sizes = sorted(src.glob("size_*.jsonl"), key=lambda p: int(_suffix(p)))
    if sizes:
        xs = [int(_suffix(p)) for p in sizes]
        ys = [np.mean([r["u_ms"] + r["v_ms"] for r in read_telemetry(p)]) for p in sizes]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel("ratings |Y|")
        ax.set_ylabel("epoch time (ms)")
        fig.tight_layout()
        fig.savefig(src / "size.png", dpi=120)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description="scaling figures from telemetry")
    sub = ap.add_subparsers(dest="cmd", required=True)
    c = sub.add_parser("collect")
    c.add_argument("out", type=Path)
    c.add_argument("--epochs", type=int, default=60)
    p = sub.add_parser("plot")
    p.add_argument("src", type=Path)
    args = ap.parse_args(argv)
    if args.cmd == "collect":
        collect(args.out, args.epochs)
    else:
        plot(args.src)
    return 0


if __name__ == "__main__":
    sys.exit(main())
