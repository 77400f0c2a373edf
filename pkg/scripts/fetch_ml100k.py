"""Recreate MovieLens 100K ``u.data`` from the copy bundled in the recbole wheel.

The GroupLens site is the canonical source; this route only needs the package
mirror.  The bundled ``ml-100k.inter`` holds the same 100000 ratings in the
same order with a typed header line, which is dropped here.

Usage::

    python scripts/fetch_ml100k.py [--out /root/data/ml-100k/u.data]
"""

from __future__ import annotations

import argparse
import hashlib
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def _convert(raw: bytes) -> bytes:
    lines = raw.decode("utf-8").splitlines()
    if not lines or not lines[0].startswith("user_id"):
        raise SystemExit("unexpected header in bundled file")
    out = []
    for line in lines[1:]:
        user, item, rating, stamp = line.split("\t")
        out.append(f"{user}\t{item}\t{int(float(rating))}\t{int(float(stamp))}")
    return ("\n".join(out) + "\n").encode()


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("/root/data/ml-100k/u.data"))
    ap.add_argument("--version", default="1.2.1", help="recbole release to download")
    args = ap.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", f"recbole=={args.version}", "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            data = _convert(zf.read(MEMBER))
    n = data.count(b"\n")
    if n != 100000:
        raise SystemExit(f"expected 100000 ratings, got {n}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(data)
    print(f"wrote {args.out} ({n} ratings, sha256 {hashlib.sha256(data).hexdigest()[:16]})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
