"""Shadow file system used to verify every replayed read and every recovery.

File contents are kept as lists of pieces ``(start, length, seed, skip)``:
the bytes are ``payload(seed, skip + length)[skip:]`` (or zeros when ``seed``
is None). No bulk data is stored, so snapshots at each commit are cheap.
Piece lists are never mutated in place once shared; appends extend the
list, and a snapshot records the list object plus its length at that time.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from ..errors import NotFound
from ..placement import OpenFlag
from ..vfs import CONVENTIONAL, MAPPER
from .trace import payload


def _clip(pieces, lo, hi):
    out = []
    for start, length, seed, skip in pieces:
        a, b = max(start, lo), min(start + length, hi)
        if a < b:
            out.append((a, b - a, seed, skip + a - start))
    return out


def render(pieces, count, offset, length) -> bytes:
    """Bytes ``[offset, offset+length)`` of the first ``count`` pieces."""
    out = bytearray()
    end = offset + length
    i = max(bisect.bisect_right(pieces, offset, hi=count, key=lambda p: p[0]) - 1, 0)
    while i < count and len(out) < length:
        start, n, seed, skip = pieces[i]
        a, b = max(start, offset), min(start + n, end)
        if a < b:
            lo = skip + a - start
            if seed is None:
                out += bytes(b - a)
            else:
                out += payload(seed, lo + b - a)[lo:]
        i += 1
    return bytes(out)


@dataclass
class Snapshot:
    pieces: list
    count: int
    size: int

    def read(self, offset, length):
        return render(self.pieces, self.count, offset, length)


@dataclass
class ShadowFile:
    path: str | None
    backend: str
    pieces: list = field(default_factory=list)
    size: int = 0
    handles: int = 0

    def write(self, offset, length, seed):
        if offset == self.size:
            self.pieces.append((offset, length, seed, 0))
        else:
            new = _clip(self.pieces, 0, offset)
            if offset > self.size:
                new.append((self.size, offset - self.size, None, 0))
            new.append((offset, length, seed, 0))
            new += _clip(self.pieces, offset + length, self.size)
            self.pieces = new
        self.size = max(self.size, offset + length)

    def truncate(self, size):
        if size < self.size:
            self.pieces = _clip(self.pieces, 0, size)
        elif size > self.size:
            self.pieces = self.pieces + [(self.size, size - self.size, None, 0)]
        self.size = size

    def snapshot(self) -> Snapshot:
        return Snapshot(self.pieces, len(self.pieces), self.size)

    def read(self, offset, length):
        return render(self.pieces, len(self.pieces), offset, length)


@dataclass
class _Fd:
    file: ShadowFile
    flags: OpenFlag
    pos: int = 0


class ShadowFS:
    """Reference model of the facade's visible and durable state.

    ``route(path, flags, mmap_writable)`` must return the backend the facade
    would pick for a new file, so that durability is tracked per backend:
    mapper files become durable all together at each metadata commit,
    conventional files individually at their own sync.
    """

    def __init__(self, route):
        self.route = route
        self.names: dict[str, ShadowFile] = {}
        self.fds: dict[object, _Fd] = {}
        self.durable_mapper: dict[str, Snapshot] = {}
        self.durable_conv: dict[str, Snapshot] = {}

    # durability

    def commit_mapper(self):
        self.durable_mapper = {p: f.snapshot() for p, f in self.names.items() if f.backend == MAPPER}

    def _sync(self, f: ShadowFile):
        if f.backend == MAPPER:
            self.commit_mapper()
        elif f.path is not None:
            self.durable_conv[f.path] = f.snapshot()

    def durable(self) -> dict[str, Snapshot]:
        out = dict(self.durable_conv)
        out.update(self.durable_mapper)
        return out

    def durable_state(self):
        return dict(self.durable_mapper), dict(self.durable_conv)

    # operations (called after the facade call succeeded)

    def open(self, fd, path, flags: OpenFlag, mmap_writable=False):
        f = self.names.get(path)
        if f is None:
            if OpenFlag.CREATE not in flags:
                raise NotFound(path)
            f = ShadowFile(path, self.route(path, flags, mmap_writable))
            self.names[path] = f
        elif OpenFlag.TRUNCATE in flags and f.size:
            f.truncate(0)
        f.handles += 1
        self.fds[fd] = _Fd(f, flags)
        return f

    def backend(self, fd):
        return self.fds[fd].file.backend

    def file(self, fd) -> ShadowFile:
        return self.fds[fd].file

    def write(self, fd, length, seed, offset=None):
        h = self.fds[fd]
        f = h.file
        if offset is None:
            if f.backend == MAPPER or OpenFlag.APPEND in h.flags:
                offset = f.size
            else:
                offset = h.pos
            h.pos = offset + length
        f.write(offset, length, seed)

    def read(self, fd, offset, length):
        return self.fds[fd].file.read(offset, length)

    def fsync(self, fd):
        self._sync(self.fds[fd].file)

    def close(self, fd):
        h = self.fds.pop(fd)
        f = h.file
        f.handles -= 1
        if f.backend == MAPPER:
            if f.path is None and f.handles == 0:
                self.commit_mapper()
            elif h.flags.writable:
                self.commit_mapper()
        elif h.flags.writable:
            self._sync(f)

    def truncate(self, fd, size):
        f = self.fds[fd].file
        f.truncate(size)
        if f.backend == MAPPER:
            self.commit_mapper()

    def unlink(self, path):
        f = self.names.pop(path)
        f.path = None
        if f.backend == MAPPER:
            self.commit_mapper()
        else:
            self.durable_conv.pop(path, None)

    def rename(self, old, new):
        if old == new:
            return
        f = self.names.pop(old)
        target = self.names.pop(new, None)
        if target is not None:
            target.path = None
        f.path = new
        self.names[new] = f
        if f.backend == MAPPER:
            self.commit_mapper()
        else:
            snap = self.durable_conv.pop(old, None)
            self.durable_conv.pop(new, None)
            if snap is not None:
                self.durable_conv[new] = snap

    def unmount(self):
        self.fds.clear()
        self.commit_mapper()
