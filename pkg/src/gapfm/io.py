"""Rating ingestion and model persistence.

Archive layout (all integers little-endian)::

    b"GAPFMARC"  magic
    u16          format version
    u32          header length H
    H bytes      UTF-8 JSON header (dimensions, id tables, settings)
    M*D f64      user factors, one user per row
    N*D f64      item factors, one item per row
    32 bytes     SHA-256 of everything above
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import DimensionError, GapfmError, GradedDataset, ModelFactors

log = logging.getLogger(__name__)

MAGIC = b"GAPFMARC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_DIGEST = 32


class ParseError(GapfmError, ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyInputError(GapfmError, ValueError):
    pass


class CorruptArchiveError(GapfmError, ValueError):
    pass


class UnsupportedVersionError(GapfmError, ValueError):
    pass


@dataclass(frozen=True)
class RatingRecord:
    user: str
    item: str
    grade: int
    timestamp: int | None = None
    line: int = 0


@dataclass
class IdMap:
    """Dense index <-> external id tables, in order of first appearance."""

    users: list[str] = field(default_factory=list)
    items: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._u = {u: k for k, u in enumerate(self.users)}
        self._i = {i: k for k, i in enumerate(self.items)}

    def user_index(self, external: str) -> int:
        try:
            return self._u[external]
        except KeyError:
            raise KeyError(f"unknown user id {external!r}") from None

    def item_index(self, external: str) -> int:
        try:
            return self._i[external]
        except KeyError:
            raise KeyError(f"unknown item id {external!r}") from None

    def _add(self, table: dict, ids: list, key: str) -> int:
        idx = table.get(key)
        if idx is None:
            idx = table[key] = len(ids)
            ids.append(key)
        return idx

    def add(self, user: str, item: str) -> tuple[int, int]:
        return self._add(self._u, self.users, user), self._add(self._i, self.items, item)


def _parse_grade(text: str, line: int) -> int:
    text = text.strip()
    try:
        grade = int(text)
    except ValueError:
        raise ParseError(f"grade {text!r} is not an integer", line) from None
    if grade < 1:
        raise ParseError(f"grade {grade} must be >= 1", line)
    return grade


def build_dataset(records: Iterable[RatingRecord]) -> tuple[GradedDataset, IdMap]:
    """Remap ids densely; a repeated (user, item) pair keeps its last grade."""
    ids = IdMap()
    grades: dict[tuple[int, int], int] = {}
    for rec in records:
        key = ids.add(rec.user, rec.item)
        if key in grades:
            log.warning("line %d: duplicate rating for user %s item %s; keeping the later one", rec.line, rec.user, rec.item)
        grades[key] = rec.grade
    if not grades:
        raise EmptyInputError("no ratings found")
    pairs = np.array(list(grades.keys()), dtype=np.int64)
    ds = GradedDataset(len(ids.users), len(ids.items), pairs[:, 0], pairs[:, 1], np.fromiter(grades.values(), np.int64))
    return ds, ids


def _movielens_records(path: Path) -> Iterator[RatingRecord]:
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", n)
            user, item, rating, ts = parts
            if not user or not item:
                raise ParseError("empty id", n)
            try:
                stamp = int(ts)
            except ValueError:
                raise ParseError(f"timestamp {ts!r} is not an integer", n) from None
            yield RatingRecord(user, item, _parse_grade(rating, n), stamp, n)


def load_movielens_100k(path: str | Path) -> tuple[GradedDataset, IdMap]:
    """Read ``user<TAB>item<TAB>rating<TAB>timestamp`` lines (the ``u.data`` layout)."""
    return build_dataset(_movielens_records(Path(path)))


def _csv_records(path: Path, delimiter: str, has_header: bool) -> Iterator[RatingRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for row in reader:
            n = reader.line_num
            if has_header and n == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ParseError(f"expected user, item, grade; got {len(row)} fields", n)
            user, item = row[0].strip(), row[1].strip()
            if not user or not item:
                raise ParseError("empty id", n)
            yield RatingRecord(user, item, _parse_grade(row[2], n), None, n)


def load_csv_triples(
    path: str | Path, delimiter: str = ",", has_header: bool = False
) -> tuple[GradedDataset, IdMap]:
    """Generic ``user, item, grade`` rows; extra columns are ignored."""
    return build_dataset(_csv_records(Path(path), delimiter, has_header))


@dataclass
class ModelArchive:
    model: ModelFactors
    y_max: int
    ids: IdMap
    hyper: dict = field(default_factory=dict)
    seed: int | None = None
    protocol: dict | None = None
    telemetry: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def header(self) -> dict:
        return {
            "format_version": self.version,
            "num_users": self.model.num_users,
            "num_items": self.model.num_items,
            "dim": self.model.dim,
            "y_max": self.y_max,
            "user_ids": self.ids.users,
            "item_ids": self.ids.items,
            "hyper": self.hyper,
            "seed": self.seed,
            "protocol": self.protocol,
            "telemetry": self.telemetry,
        }


def archive_bytes(archive: ModelArchive) -> bytes:
    m = archive.model
    if len(archive.ids.users) != m.num_users or len(archive.ids.items) != m.num_items:
        raise DimensionError("id tables do not match factor dimensions")
    header = json.dumps(archive.header(), sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(
        [
            _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)),
            header,
            np.ascontiguousarray(m.U.T, dtype="<f8").tobytes(),
            np.ascontiguousarray(m.V.T, dtype="<f8").tobytes(),
        ]
    )
    return body + hashlib.sha256(body).digest()


def save_model(archive: ModelArchive, path: str | Path) -> None:
    Path(path).write_bytes(archive_bytes(archive))


def parse_archive(blob: bytes) -> ModelArchive:
    if len(blob) < _PREFIX.size or blob[:8] != MAGIC:
        raise CorruptArchiveError("not a model archive")
    _, version, hlen = _PREFIX.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"archive format {version} is not supported (expected {FORMAT_VERSION})")
    if len(blob) < _PREFIX.size + hlen + _DIGEST:
        raise CorruptArchiveError("archive is truncated")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptArchiveError("checksum mismatch")
    try:
        header = json.loads(body[_PREFIX.size : _PREFIX.size + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptArchiveError(f"unreadable header: {exc}") from None
    M, N, D = header["num_users"], header["num_items"], header["dim"]
    data = np.frombuffer(body, dtype="<f8", offset=_PREFIX.size + hlen)
    if data.size != (M + N) * D:
        raise CorruptArchiveError("factor payload size does not match header")
    U = data[: M * D].reshape(M, D).astype(np.float64).T
    V = data[M * D :].reshape(N, D).astype(np.float64).T
    return ModelArchive(
        model=ModelFactors(U, V),
        y_max=header["y_max"],
        ids=IdMap(list(header["user_ids"]), list(header["item_ids"])),
        hyper=header["hyper"],
        seed=header["seed"],
        protocol=header["protocol"],
        telemetry=header["telemetry"],
        version=version,
    )


def load_model(path: str | Path) -> ModelArchive:
    return parse_archive(Path(path).read_bytes())


def export_text(archive: ModelArchive, path: str | Path) -> None:
    """Human-readable JSON dump; floats are written in exact hex form."""
    doc = archive.header()
    doc["U"] = [[x.hex() for x in row] for row in archive.model.U.T.tolist()]
    doc["V"] = [[x.hex() for x in row] for row in archive.model.V.T.tolist()]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
