"""Two-slot JSON metadata store with an atomically swapped pointer file.

A commit writes the new document into whichever slot does not hold the
current state, reads it back, then replaces ``meta.cur`` via rename. A crash
at any point leaves the previous slot, still named by the pointer, intact.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

from .errors import CorruptMetadata

SLOTS = ("a", "b")
POINTER = "meta.cur"
FORMAT_VERSION = 1

CRASH_POINTS = ("before_slot", "torn_slot", "after_slot", "torn_pointer", "after_swap")


class SimulatedCrash(Exception):
    """Raised by fault injection to abandon an operation mid-flight."""


@dataclass(frozen=True)
class CrashPoint:
    point: str
    torn_at: int = 0


_TRAILER = b"\n#crc32:"


def encode(doc) -> bytes:
    """JSON body followed by a ``#crc32:<hex>`` trailer line over the body bytes."""
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return body + _TRAILER + f"{zlib.crc32(body):08x}".encode() + b"\n"


def decode(raw: bytes):
    """Parse and validate one slot; returns None when the slot is unusable."""
    cut = raw.rfind(_TRAILER)
    if cut < 0:
        return None
    body, crc = raw[:cut], raw[cut + len(_TRAILER):].strip()
    if crc != f"{zlib.crc32(body):08x}".encode():
        return None
    try:
        doc = json.loads(body)
    except (ValueError, UnicodeDecodeError):
        return None
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        return None
    return doc


class MetadataStore:
    def __init__(self, directory, durable=True):
        self.dir = Path(directory)
        self.durable = durable
        self._valid_slot = None

    def _slot_path(self, slot):
        return self.dir / f"meta.{slot}"

    def _write(self, path, data):
        with open(path, "wb") as f:
            f.write(data)
            if self.durable:
                f.flush()
                os.fsync(f.fileno())

    def _pointer(self):
        try:
            slot = (self.dir / POINTER).read_text().strip()
        except FileNotFoundError:
            return None
        return slot if slot in SLOTS else None

    def _read_slot(self, slot):
        try:
            return decode(self._slot_path(slot).read_bytes())
        except FileNotFoundError:
            return None

    def exists(self):
        return (self.dir / POINTER).exists() or any(self._slot_path(s).exists() for s in SLOTS)

    def load(self):
        """Return the committed document, or None for a fresh store."""
        pointer = self._pointer()
        if pointer is None:
            if (self.dir / POINTER).exists():
                # Garbage pointer: fall back to the newest valid slot.
                docs = [(s, self._read_slot(s)) for s in SLOTS]
                docs = [(s, d) for s, d in docs if d is not None]
                if not docs:
                    raise CorruptMetadata(f"{self.dir}: no valid metadata slot")
                slot, doc = max(docs, key=lambda sd: sd[1]["generation"])
                self._valid_slot = slot
                return doc
            # No pointer means no commit ever completed.
            return None
        backup = SLOTS[1 - SLOTS.index(pointer)]
        for slot in (pointer, backup):
            doc = self._read_slot(slot)
            if doc is not None:
                self._valid_slot = slot
                return doc
        raise CorruptMetadata(f"{self.dir}: both metadata slots fail validation")

    def commit(self, doc, crash: CrashPoint | None = None):
        self.dir.mkdir(parents=True, exist_ok=True)
        point = crash.point if crash else None
        if self._valid_slot is None:
            self._valid_slot = self._pointer()
        target = "a" if self._valid_slot != "a" else "b"
        data = encode(doc)
        if point == "before_slot":
            raise SimulatedCrash(point)
        if point == "torn_slot":
            self._write(self._slot_path(target), data[:crash.torn_at])
            raise SimulatedCrash(point)
        self._write(self._slot_path(target), data)
        if self._slot_path(target).read_bytes() != data:
            raise CorruptMetadata(f"{self._slot_path(target)}: read-back verification failed")
        if point == "after_slot":
            raise SimulatedCrash(point)
        tmp = self.dir / (POINTER + ".tmp")
        if point == "torn_pointer":
            self._write(tmp, target.encode()[:crash.torn_at])
            raise SimulatedCrash(point)
        self._write(tmp, target.encode())
        os.replace(tmp, self.dir / POINTER)
        if self.durable:
            fd = os.open(self.dir, os.O_RDONLY)
            try:
                os.fsync(fd)
            finally:
                os.close(fd)
        self._valid_slot = target
        if point == "after_swap":
            raise SimulatedCrash(point)
