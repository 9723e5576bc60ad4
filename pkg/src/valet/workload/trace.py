"""Replayable trace operations and their JSONL encoding."""

from __future__ import annotations

import gzip
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

OPS = ("open", "write", "read", "fsync", "close", "rename", "unlink", "truncate")


def payload(seed: int, size: int) -> bytes:
    """Deterministic pseudo-random bytes; a prefix of a longer payload for the same seed."""
    if size <= 0:
        return b""
    return hashlib.shake_128(seed.to_bytes(8, "little")).digest(size)


@dataclass
class TraceOp:
    seq: int
    op: str
    path: str | None = None
    fd: int | None = None
    size: int | None = None
    offset: int | None = None
    data_seed: int | None = None
    # open flags in letter form ("cwa"); "m" marks a writable mmap open
    flags: str | None = None
    # rename destination
    dest: str | None = None

    def to_json(self):
        doc = {k: getattr(self, k) for k in ("seq", "op", "path", "fd", "size", "offset", "data_seed")}
        if self.flags is not None:
            doc["flags"] = self.flags
        if self.dest is not None:
            doc["dest"] = self.dest
        return doc

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def write_trace(path, ops):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt") as out:
        for op in ops:
            out.write(json.dumps(op.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def read_trace(path) -> list[TraceOp]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(2)
    opener = gzip.open if magic == b"\x1f\x8b" else open
    with opener(path, "rt") as f:
        return [TraceOp.from_json(json.loads(line)) for line in f if line.strip()]


def _kind(path):
    """Extension, or the stem for numbered names like ``WiredTigerLog.0000000001``."""
    p = Path(path)
    if p.suffix[1:].isdigit():
        return p.stem
    return p.suffix or "(none)"


def census(ops):
    """Op counts plus bytes written per file extension."""
    counts = {}
    written = {}
    paths = {}
    for op in ops:
        counts[op.op] = counts.get(op.op, 0) + 1
        if op.op == "open":
            paths[op.fd] = op.path
        elif op.op == "write":
            ext = _kind(paths.get(op.fd, ""))
            written[ext] = written.get(ext, 0) + op.size
    return {"ops": len(ops), "by_op": dict(sorted(counts.items())),
            "bytes_by_extension": dict(sorted(written.items()))}



