"""Deterministic traces shaped like log-structured applications.

* ``lsm``: RocksDB-like. A group-committed write-ahead log, memtable flushes
  into L0 tables, fan-in compaction into larger tables, and FIFO retention
  for both obsolete log segments and old tables.
* ``cache``: CacheLib-like flash cache with a small-object engine and a
  large-object engine, each writing append-only region files that are
  evicted FIFO.
* ``wt``: WiredTiger-like. The journal is a preallocated, mmap-written file
  (small in-place overwrites) next to LSM table chunks.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, fields

from ..device import KiB, MiB
from ..errors import InvalidParams
from .trace import TraceOp


def _check_positive(params, skip=()):
    for f in fields(params):
        value = getattr(params, f.name)
        if f.name in skip or isinstance(value, str):
            continue
        if value is None or value <= 0:
            raise InvalidParams(f"{f.name} must be positive, got {value!r}")


class _Builder:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.ops: list[TraceOp] = []
        self._fd = 0

    def emit(self, op, **kw):
        self.ops.append(TraceOp(len(self.ops), op, **kw))

    def open(self, path, flags):
        fd = self._fd
        self._fd += 1
        self.emit("open", path=path, fd=fd, flags=flags)
        return fd

    def write(self, fd, size, offset=None):
        self.emit("write", fd=fd, size=size, offset=offset, data_seed=self.rng.getrandbits(63))

    def read(self, fd, offset, size):
        self.emit("read", fd=fd, offset=offset, size=size)

    def fsync(self, fd):
        self.emit("fsync", fd=fd)

    def close(self, fd):
        self.emit("close", fd=fd)

    def unlink(self, path):
        self.emit("unlink", path=path)

    def rename(self, path, dest):
        self.emit("rename", path=path, dest=dest)

    def truncate(self, fd, size):
        self.emit("truncate", fd=fd, size=size)

    def write_file(self, path, size, io_size):
        fd = self.open(path, "cw")
        left = size
        while left > 0:
            n = min(io_size, left)
            self.write(fd, n)
            left -= n
        self.fsync(fd)
        self.close(fd)

    def read_file(self, path, size, io_size):
        fd = self.open(path, "r")
        for off in range(0, size, io_size):
            self.read(fd, off, min(io_size, size - off))
        self.close(fd)

    def replace_small(self, tmp, final, size):
        """Write-to-temp then rename, as used for CURRENT-style pointer files."""
        fd = self.open(tmp, "cwt")
        self.write(fd, size)
        self.fsync(fd)
        self.close(fd)
        self.rename(tmp, final)


@dataclass
class LsmTraceParams:
    op_count: int = 100_000
    key_size: int = 20
    value_size: int = 400
    wal_segment_bytes: int = 128 * KiB
    memtable_bytes: int = 1 * MiB
    sst_bytes: int = 2 * MiB
    compaction_fanin: int = 4
    fifo_retention: int = 2
    sst_retention_bytes: int = 16 * MiB
    wal_sync_every: int = 64
    io_size: int = 64 * KiB
    read_fraction: float = 0.01
    # Puts between two steps of the background flush/compaction worker.
    background_every: int = 32
    prefix: str = "db"


def gen_lsm_trace(params: LsmTraceParams, seed=0) -> list[TraceOp]:
    """Foreground puts go to the WAL; one background worker runs memtable
    flushes and compactions, one I/O per step, interleaved with the puts."""
    _check_positive(params, skip=("read_fraction",))
    if not 0 <= params.read_fraction < 1:
        raise InvalidParams("read_fraction must be in [0, 1)")
    p = params
    b = _Builder(seed)
    rng = b.rng
    number = iter(range(1, 10**9))
    record = p.key_size + p.value_size

    fd = b.open(f"{p.prefix}/LOCK", "cw")
    b.close(fd)
    manifest = b.open(f"{p.prefix}/MANIFEST-{next(number):06d}", "cwa")
    b.write(manifest, 128)
    b.fsync(manifest)
    b.replace_small(f"{p.prefix}/{next(number):06d}.dbtmp", f"{p.prefix}/CURRENT", 16)

    def open_wal():
        path = f"{p.prefix}/{next(number):06d}.log"
        return path, b.open(path, "cwa")

    wal_path, wal = open_wal()
    wal_bytes = since_sync = memtable = 0
    live_wals = [wal_path]        # segments holding unflushed memtable data
    obsolete = deque()            # flushed segments kept for FIFO retention
    l0: list[tuple[str, int]] = []
    tables: deque[tuple[str, int]] = deque()   # readable tables, oldest first
    jobs: deque = deque()

    def manifest_edit():
        b.write(manifest, 96)
        b.fsync(manifest)

    def rotate_wal():
        nonlocal wal_path, wal, wal_bytes, since_sync
        b.fsync(wal)
        b.close(wal)
        wal_path, wal = open_wal()
        live_wals.append(wal_path)
        wal_bytes = since_sync = 0

    def write_table(size):
        """Job steps writing one table; returns its path through ``out``."""
        path = f"{p.prefix}/{next(number):06d}.sst"
        fd = b.open(path, "cw")
        yield
        for off in range(0, size, p.io_size):
            b.write(fd, min(p.io_size, size - off))
            yield
        b.fsync(fd)
        b.close(fd)
        return path

    def fifo_drop():
        l0_paths = {path for path, _ in l0}
        while sum(s for _, s in tables) > p.sst_retention_bytes:
            victim = next((t for t in tables if t[0] not in l0_paths), None)
            if victim is None:
                break
            tables.remove(victim)
            b.unlink(victim[0])

    def compaction():
        inputs = l0[:p.compaction_fanin]
        total = 0
        for path, size in inputs:
            fd = b.open(path, "r")
            for off in range(0, size, p.io_size):
                b.read(fd, off, min(p.io_size, size - off))
                yield
            b.close(fd)
            total += size
        outputs = []
        while total > 0:
            size = min(p.sst_bytes, total)
            path = yield from write_table(size)
            outputs.append((path, size))
            total -= size
        manifest_edit()
        for item in inputs:
            b.unlink(item[0])
            tables.remove(item)
            l0.remove(item)
        tables.extend(outputs)
        fifo_drop()

    def flush(size, segments):
        path = yield from write_table(size)
        manifest_edit()
        l0.append((path, size))
        tables.append((path, size))
        obsolete.extend(segments)
        while len(obsolete) > p.fifo_retention:
            b.unlink(obsolete.popleft())
        if len(l0) >= p.compaction_fanin and not any(j[0] == "compaction" for j in jobs):
            jobs.append(("compaction", compaction()))
        fifo_drop()

    def step():
        while jobs:
            try:
                next(jobs[0][1])
                return
            except StopIteration:
                jobs.popleft()

    for i in range(p.op_count):
        if tables and rng.random() < p.read_fraction:
            path, size = tables[rng.randrange(len(tables))]
            fd = b.open(path, "r")
            off = rng.randrange(max(size - record, 0) + 1)
            b.read(fd, off, min(record, size))
            b.close(fd)
        b.write(wal, record)
        wal_bytes += record
        memtable += record
        since_sync += 1
        if since_sync >= p.wal_sync_every:
            b.fsync(wal)
            since_sync = 0
        if memtable >= p.memtable_bytes:
            # Switch memtables: the sealed segments become obsolete once the
            # flush that covers them has finished.
            rotate_wal()
            sealed = live_wals[:-1]
            del live_wals[:-1]
            jobs.append(("flush", flush(memtable, sealed)))
            memtable = 0
        elif wal_bytes >= p.wal_segment_bytes:
            rotate_wal()
        if i % p.background_every == 0:
            step()

    while jobs:
        step()
    b.fsync(wal)
    b.close(wal)
    b.close(manifest)
    return b.ops


@dataclass
class CacheTraceParams:
    op_count: int = 100_000
    prefill: int = 2_000
    set_fraction: float = 0.2
    large_fraction: float = 0.02
    small_min: int = 100
    small_max: int = 2048
    large_min: int = 32 * KiB
    large_max: int = 160 * KiB
    small_region_bytes: int = 256 * KiB
    large_region_bytes: int = 2 * MiB
    small_regions_kept: int = 24
    large_regions_kept: int = 4
    prefix: str = "cache"


class _Engine:
    """One append-only region log with FIFO eviction."""

    def __init__(self, b: _Builder, directory, region_bytes, kept):
        self.b = b
        self.dir = directory
        self.region_bytes = region_bytes
        self.kept = kept
        self.regions: deque[tuple[str, list]] = deque()  # (path, [(offset, size)])
        self.count = 0
        self.fd = None
        self.fill = 0

    def _open_region(self):
        self.count += 1
        path = f"{self.dir}/region_{self.count:06d}.bin"
        self.fd = self.b.open(path, "cwa")
        self.fill = 0
        self.regions.append((path, []))

    def seal(self):
        if self.fd is not None:
            self.b.fsync(self.fd)
            self.b.close(self.fd)
            self.fd = None

    def set(self, size):
        if self.fd is None or self.fill + size > self.region_bytes:
            self.seal()
            self._open_region()
            while len(self.regions) > self.kept:
                path, _ = self.regions.popleft()
                self.b.unlink(path)
        self.b.write(self.fd, size)
        self.regions[-1][1].append((self.fill, size))
        self.fill += size

    def get(self, rng):
        populated = [r for r in self.regions if r[1]]
        if not populated:
            return False
        path, objects = populated[rng.randrange(len(populated))]
        offset, size = objects[rng.randrange(len(objects))]
        fd = self.b.open(path, "r")
        self.b.read(fd, offset, size)
        self.b.close(fd)
        return True


def gen_cache_trace(params: CacheTraceParams, seed=0) -> list[TraceOp]:
    _check_positive(params, skip=("prefill", "set_fraction", "large_fraction"))
    p = params
    if p.prefill < 0 or not 0 <= p.set_fraction <= 1 or not 0 <= p.large_fraction <= 1:
        raise InvalidParams("prefill must be >= 0 and fractions within [0, 1]")
    if p.small_min > p.small_max or p.large_min > p.large_max:
        raise InvalidParams("object size bounds are inverted")
    if p.small_max > p.small_region_bytes or p.large_max > p.large_region_bytes:
        raise InvalidParams("objects must fit in a region")
    b = _Builder(seed)
    rng = b.rng
    small = _Engine(b, f"{p.prefix}/small", p.small_region_bytes, p.small_regions_kept)
    large = _Engine(b, f"{p.prefix}/large", p.large_region_bytes, p.large_regions_kept)

    def do_set():
        if rng.random() < p.large_fraction:
            large.set(rng.randint(p.large_min, p.large_max))
        else:
            small.set(rng.randint(p.small_min, p.small_max))

    for _ in range(p.prefill):
        do_set()
    for _ in range(p.op_count):
        if rng.random() < p.set_fraction:
            do_set()
        else:
            engine = large if rng.random() < p.large_fraction else small
            engine.get(rng)
    small.seal()
    large.seal()
    return b.ops


@dataclass
class WtTraceParams:
    op_count: int = 20_000
    record_size: int = 256
    log_file_bytes: int = 128 * KiB
    log_sync_every: int = 32
    log_retention: int = 2
    chunk_bytes: int = 1 * MiB
    merge_fanin: int = 4
    chunk_retention_bytes: int = 8 * MiB
    io_size: int = 64 * KiB
    prefix: str = "wt"


def gen_wt_trace(params: WtTraceParams, seed=0) -> list[TraceOp]:
    _check_positive(params)
    p = params
    if p.record_size + 128 > p.log_file_bytes:
        raise InvalidParams("log file too small for one record")
    b = _Builder(seed)
    number = iter(range(1, 10**9))

    fd = b.open(f"{p.prefix}/WiredTiger.lock", "cw")
    b.close(fd)
    b.replace_small(f"{p.prefix}/WiredTiger.turtle.set", f"{p.prefix}/WiredTiger.turtle", 512)

    logs = deque()

    def open_log():
        path = f"{p.prefix}/journal/WiredTigerLog.{next(number):010d}"
        fd = b.open(path, "cwm")
        b.truncate(fd, p.log_file_bytes)
        logs.append(path)
        while len(logs) > p.log_retention + 1:
            b.unlink(logs.popleft())
        return fd

    log = open_log()
    cursor = 128  # header block is rewritten in place on every sync
    pending = 0
    memtable = 0
    chunks: deque[tuple[str, int]] = deque()
    fresh: list[tuple[str, int]] = []

    def sync_log():
        b.write(log, 128, offset=0)
        b.fsync(log)

    for _ in range(p.op_count):
        if cursor + p.record_size > p.log_file_bytes:
            sync_log()
            b.close(log)
            log = open_log()
            cursor, pending = 128, 0
        b.write(log, p.record_size, offset=cursor)
        cursor += p.record_size
        pending += 1
        memtable += p.record_size
        if pending >= p.log_sync_every:
            sync_log()
            pending = 0
        if memtable >= p.chunk_bytes:
            path = f"{p.prefix}/table/chunk-{next(number):06d}.lsm"
            b.write_file(path, memtable, p.io_size)
            fresh.append((path, memtable))
            chunks.append((path, memtable))
            memtable = 0
            b.replace_small(f"{p.prefix}/WiredTiger.turtle.set", f"{p.prefix}/WiredTiger.turtle", 512)
            if len(fresh) >= p.merge_fanin:
                total = 0
                for path, size in fresh:
                    b.read_file(path, size, p.io_size)
                    total += size
                merged = f"{p.prefix}/table/chunk-{next(number):06d}.lsm"
                b.write_file(merged, total, p.io_size)
                for item in fresh:
                    b.unlink(item[0])
                    chunks.remove(item)
                fresh.clear()
                chunks.append((merged, total))
            fresh_paths = {path for path, _ in fresh}
            while sum(s for _, s in chunks) > p.chunk_retention_bytes:
                victim = next((c for c in chunks if c[0] not in fresh_paths), None)
                if victim is None:
                    break
                chunks.remove(victim)
                b.unlink(victim[0])
    sync_log()
    b.close(log)
    return b.ops


GENERATORS = {
    "lsm": (LsmTraceParams, gen_lsm_trace),
    "cache": (CacheTraceParams, gen_cache_trace),
    "wt": (WtTraceParams, gen_wt_trace),
}
