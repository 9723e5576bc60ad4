"""POSIX-flavored session layer over the mapper and the conventional store.

Descriptors are small facade-scoped integers. Each open is routed once to a
backend: the mapper for log-structured files in host-managed mode, or the
conventional store for in-place-update files (and for everything in
hint-only mode, where the would-be kernel hint is written to an audit log).
"""

from __future__ import annotations

import enum
import fnmatch
import posixpath
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from .conventional import ConventionalStore
from .device import MiB, ZonedDevice
from .errors import BadFd, NotFound, NotSupported, OutOfRange
from .mapper import Mapper, MapperConfig
from .placement import FileMeta, Heuristic, KernelHint, OpenFlag, PlacementEngine, resolve_multistream

MAPPER = "mapper"
CONVENTIONAL = "conventional"

DEFAULT_PASSTHROUGH = (
    "LOCK", "CURRENT", "IDENTITY", "MANIFEST-*", "OPTIONS-*", "*.dbtmp",
    "WiredTiger.lock", "WiredTiger.turtle*",
)


class Mode(str, enum.Enum):
    HINT_ONLY = "hint-only"
    HOST_MANAGED = "host-managed"


@dataclass(frozen=True)
class PassthroughPolicy:
    globs: tuple[str, ...] = DEFAULT_PASSTHROUGH

    def matches(self, path, flags=OpenFlag.READ, mmap_writable=False):
        if mmap_writable:
            return True
        name = posixpath.basename(path)
        return any(fnmatch.fnmatchcase(name, g) for g in self.globs)


@dataclass
class AuditEntry:
    path: str
    stream: int
    group: int
    kernel_hint: KernelHint

    def line(self):
        return f"{self.path}\t{self.stream}\t{self.group}\t{self.kernel_hint.name.lower()}"


@dataclass
class _Handle:
    backend: str
    key: object  # mapper uuid or conventional file id
    path: str
    flags: OpenFlag
    pos: int = 0


class ReadaheadCache:
    """Evict-oldest cache of staged extent payloads, keyed by (uuid, logical start)."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.used = 0
        self._entries: OrderedDict[tuple, bytes] = OrderedDict()

    def put(self, uuid, start, data):
        key = (uuid, start)
        if key in self._entries or len(data) > self.capacity:
            return
        self._entries[key] = data
        self.used += len(data)
        while self.used > self.capacity:
            _, old = self._entries.popitem(last=False)
            self.used -= len(old)

    def get(self, uuid, offset, length):
        for (u, start), data in self._entries.items():
            if u == uuid and start <= offset and offset + length <= start + len(data):
                return data[offset - start:offset - start + length]
        return None

    def drop(self, uuid):
        for key in [k for k in self._entries if k[0] == uuid]:
            self.used -= len(self._entries.pop(key))


class Vfs:
    def __init__(self, mode: Mode, conventional: ConventionalStore, placement: PlacementEngine,
                 mapper: Mapper | None = None, policy: PassthroughPolicy | None = None,
                 audit_path=None, readahead_bytes=4 * MiB):
        if mode is Mode.HOST_MANAGED and mapper is None:
            raise ValueError("host-managed mode needs a mapper")
        self.mode = mode
        self.mapper = mapper
        self.conventional = conventional
        self.placement = placement
        self.policy = policy or PassthroughPolicy()
        self.audit: list[AuditEntry] = []
        self.audit_path = Path(audit_path) if audit_path else None
        self.readahead = ReadaheadCache(readahead_bytes)
        self.fd_map: dict[int, _Handle] = {}
        self._next_fd = 3
        self._write_sizes: dict[str, list[int]] = {}
        self._lock = threading.RLock()

    @classmethod
    def mount(cls, device: ZonedDevice, meta_dir, placement: PlacementEngine,
              mode=Mode.HOST_MANAGED, mapper_config: MapperConfig | None = None, **kwargs) -> Vfs:
        meta_dir = Path(meta_dir)
        meta_dir.mkdir(parents=True, exist_ok=True)
        mapper = None
        mapper_config = mapper_config or MapperConfig(metadata_path=str(meta_dir))
        durable = mapper_config.fsync_metadata
        if mode is Mode.HOST_MANAGED:
            mapper = Mapper.mount(device, mapper_config, placement)
        conventional = ConventionalStore(device, meta_dir, durable=durable)
        return cls(mode, conventional, placement, mapper=mapper, **kwargs)

    def unmount(self):
        with self._lock:
            for fd in list(self.fd_map):
                self.f_close(fd)
            if self.mapper is not None:
                self.mapper.unmount()

    # routing

    def route_for(self, path, flags=OpenFlag.READ, mmap_writable=False):
        """Backend that a new file at ``path`` would land on."""
        if self.mode is Mode.HINT_ONLY or self.policy.matches(path, flags, mmap_writable):
            return CONVENTIONAL
        return MAPPER

    def locate(self, path):
        if self.mapper is not None and path in self.mapper.path_map:
            return MAPPER
        if self.conventional.exists(path):
            return CONVENTIONAL
        return None

    def _handle(self, fd) -> _Handle:
        try:
            return self.fd_map[fd]
        except KeyError:
            raise BadFd(f"bad file descriptor {fd}") from None

    def _size_hint(self, path):
        stats = self._write_sizes.get(posixpath.splitext(path)[1])
        return stats[1] // stats[0] if stats else None

    def _observe_write(self, path, n):
        stats = self._write_sizes.setdefault(posixpath.splitext(path)[1], [0, 0])
        stats[0] += 1
        stats[1] += n

    def _record_hint(self, path, flags):
        hint = self.placement.get_hint(FileMeta(path, flags, self._size_hint(path)))
        gen = self.placement.generator
        active = len(gen.rules.streams) if isinstance(gen, Heuristic) else gen.model.k
        entry = AuditEntry(path, hint.stream, hint.group, resolve_multistream(hint, active))
        self.audit.append(entry)
        if self.audit_path is not None:
            with open(self.audit_path, "a") as out:
                out.write(entry.line() + "\n")

    def _install(self, handle) -> int:
        fd = self._next_fd
        self._next_fd += 1
        self.fd_map[fd] = handle
        return fd

    # calls

    def f_open(self, path, flags=OpenFlag.READ, mmap_writable=False) -> int:
        if isinstance(flags, str):
            flags = OpenFlag.parse(flags)
        with self._lock:
            backend = self.locate(path)
            if backend is None:
                if OpenFlag.CREATE not in flags:
                    raise NotFound(path)
                backend = self.route_for(path, flags, mmap_writable)
                if self.mode is Mode.HINT_ONLY and not self.policy.matches(path, flags, mmap_writable):
                    self._record_hint(path, flags)
            if backend == MAPPER:
                key = self.mapper.create_or_open(path, flags, size_hint=self._size_hint(path))
                if OpenFlag.TRUNCATE in flags:
                    self.readahead.drop(key)
            else:
                key = self.conventional.open(path, flags)
            return self._install(_Handle(backend, key, path, flags))

    def f_mmap_open(self, path, writable=False, flags=None) -> int:
        flags = OpenFlag.parse(flags) if isinstance(flags, str) else flags
        if flags is None:
            flags = OpenFlag.READ | (OpenFlag.WRITE if writable else OpenFlag(0))
        with self._lock:
            if writable:
                if self.locate(path) == MAPPER:
                    raise NotSupported(f"{path}: writable mmap of a zone-backed file")
                key = self.conventional.open(path, flags)
                return self._install(_Handle(CONVENTIONAL, key, path, flags))
            return self.f_open(path, flags & ~(OpenFlag.WRITE | OpenFlag.APPEND | OpenFlag.TRUNCATE))

    def uuid_of(self, fd):
        h = self._handle(fd)
        return h.key if h.backend == MAPPER else None

    def backend_of(self, fd):
        return self._handle(fd).backend

    def size(self, fd):
        h = self._handle(fd)
        if h.backend == MAPPER:
            return self.mapper.record(h.key).size
        return self.conventional.size(h.key)

    def f_write(self, fd, payload) -> int:
        with self._lock:
            h = self._handle(fd)
            if h.backend == MAPPER:
                n = self.mapper.write(h.key, payload)
            else:
                if OpenFlag.APPEND in h.flags:
                    h.pos = self.conventional.size(h.key)
                n = self.conventional.write(h.key, payload, h.pos)
                h.pos += n
            self._observe_write(h.path, n)
            return n

    def f_pwrite(self, fd, payload, offset) -> int:
        with self._lock:
            h = self._handle(fd)
            if h.backend == MAPPER:
                n = self.mapper.write(h.key, payload, offset=offset)
            else:
                n = self.conventional.write(h.key, payload, offset)
            self._observe_write(h.path, n)
            return n

    def f_read(self, fd, offset, length) -> bytes:
        h = self._handle(fd)
        if h.backend == CONVENTIONAL:
            return self.conventional.read(h.key, offset, length)
        cached = self.readahead.get(h.key, offset, length)
        if cached is not None and offset + length <= self.mapper.record(h.key).size:
            return cached
        return self.mapper.read(h.key, offset, length)

    def f_readahead(self, fd, offset, length):
        h = self._handle(fd)
        if h.backend != MAPPER:
            return
        for start, ext in self.mapper.extents_for(h.key, offset, length):
            data = self.mapper.device.zone_read(ext.zone, ext.offset, ext.used)
            self.readahead.put(h.key, start, data)

    def f_fallocate(self, fd, offset, length):
        # Space is reserved at flush time; preallocation has nothing to do.
        self._handle(fd)
        if offset < 0 or length <= 0:
            raise OutOfRange(f"fallocate({offset}, {length})")

    def f_fsync(self, fd):
        h = self._handle(fd)
        if h.backend == MAPPER:
            self.mapper.fsync(h.key)
        else:
            self.conventional.fsync(h.key)

    def f_close(self, fd):
        with self._lock:
            h = self.fd_map.pop(fd, None)
            if h is None:
                raise BadFd(f"bad file descriptor {fd}")
            writable = h.flags.writable
            if h.backend == MAPPER:
                self.mapper.close(h.key, writable=writable)
            else:
                self.conventional.close(h.key, writable)

    def f_unlink(self, path):
        with self._lock:
            backend = self.locate(path)
            if backend is None:
                raise NotFound(path)
            if backend == MAPPER:
                self.readahead.drop(self.mapper.path_map[path])
                self.mapper.unlink(path)
            else:
                self.conventional.unlink(path)

    def f_rename(self, old, new):
        with self._lock:
            backend = self.locate(old)
            if backend is None:
                raise NotFound(old)
            target = self.locate(new)
            if target is not None and target != backend:
                raise NotSupported(f"rename across backends: {old} -> {new}")
            for h in self.fd_map.values():
                if h.path == old:
                    h.path = new
            if backend == MAPPER:
                if target is not None:
                    self.readahead.drop(self.mapper.path_map[new])
                self.mapper.rename(old, new)
            else:
                self.conventional.rename(old, new)

    def f_ftruncate(self, fd, size):
        with self._lock:
            h = self._handle(fd)
            if h.backend == MAPPER:
                self.readahead.drop(h.key)
                self.mapper.truncate(h.key, size)
            else:
                self.conventional.truncate(h.key, size)

    def f_dup(self, fd):
        raise NotSupported("dup")

    def f_rmdir(self, path):
        raise NotSupported("rmdir")

    def f_mkdir(self, path):
        raise NotSupported("mkdir")
