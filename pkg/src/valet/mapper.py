"""valet-mapper: extent-based files on a zoned device.

Each stream appends into its own active zone. Writes land in a pre-allocated
extent buffer and reach the device when the buffer fills or the file is
synced (allocate-on-flush). Deletes clear per-extent validity bits; a zone
whose bits are all clear is reset without moving data. Live extents are only
relocated when free zones drop below the configured threshold.

Metadata (pathMap, fileMap, zoneMap) is committed as JSON through
:class:`~valet.metadata.MetadataStore` on fsync, close, unlink, rename and
truncate. Zone resets are deferred until the commit that records the
invalidation has completed, so a crash never leaves committed extents
pointing at a reset zone.
"""

from __future__ import annotations

import bisect
import heapq
import logging
import mmap
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

from .device import KiB, MiB, ZonedDevice, ZoneState
from .errors import (
    BufferPoolExhausted,
    CorruptMetadata,
    DeviceMismatch,
    GcStall,
    InvalidConfig,
    NoFreeZones,
    NonAppendWrite,
    NotFound,
    NotOpenForWrite,
    OutOfRange,
    TruncateUp,
    UnknownUuid,
)
from .metadata import FORMAT_VERSION, CrashPoint, MetadataStore
from .placement import FileMeta, OpenFlag, PlacementEngine, resolve_zones

log = logging.getLogger(__name__)

MIN_EXTENT = 4 * KiB
MAX_EXTENT = 512 * KiB


def _round_up(n, unit):
    return -(-n // unit) * unit


@dataclass
class MapperConfig:
    metadata_path: str
    stream_budget: int = 8
    gc_free_zone_threshold: int = 4
    buffer_pool_bytes_per_stream: int = 32 * MiB
    flush_size: int = MAX_EXTENT
    fsync_metadata: bool = True


@dataclass
class Extent:
    zone: int
    offset: int
    length: int
    used: int
    group: int
    relocated: bool = False

    def to_json(self):
        doc = {"zone": self.zone, "offset": self.offset, "len": self.length,
               "used": self.used, "group": self.group}
        if self.relocated:
            doc["relocated"] = True
        return doc

    @classmethod
    def from_json(cls, d):
        return cls(d["zone"], d["offset"], d["len"], d["used"], d["group"], d.get("relocated", False))


@dataclass
class FileRecord:
    uuid: str
    stream: int
    path: str | None
    extents: list[Extent] = field(default_factory=list)
    flushed_size: int = 0
    size: int = 0
    # runtime only
    buffer: int | None = None
    fill: int = 0
    handles: int = 0
    writers: int = 0
    starts: list[int] = field(default_factory=list)

    @property
    def valid_tail(self):
        return self.extents[-1].used if self.extents else 0

    def reindex(self):
        pos = 0
        self.starts = []
        for ext in self.extents:
            self.starts.append(pos)
            pos += ext.used


@dataclass
class ZoneMeta:
    zone: int
    stream: int
    entries: list[list] = field(default_factory=list)  # [offset, length, uuid]
    bitmap: bytearray = field(default_factory=bytearray)
    index: dict[int, int] = field(default_factory=dict)
    valid: int = 0

    def add(self, offset, length, uuid):
        self.index[offset] = len(self.entries)
        self.entries.append([offset, length, uuid])
        self.bitmap.append(1)
        self.valid += 1

    def invalidate(self, offset):
        i = self.index[offset]
        if self.bitmap[i]:
            self.bitmap[i] = 0
            self.valid -= 1

    @property
    def invalid(self):
        return len(self.entries) - self.valid

    def to_json(self):
        return {
            "stream": self.stream,
            "extents": [{"offset": o, "len": n, "uuid": u} for o, n, u in self.entries],
            "bitmap": "".join("1" if b else "0" for b in self.bitmap),
        }

    @classmethod
    def from_json(cls, zone, d):
        zm = cls(zone, d["stream"])
        for e, bit in zip(d["extents"], d["bitmap"]):
            zm.add(e["offset"], e["len"], e["uuid"])
            if bit == "0":
                zm.invalidate(e["offset"])
        if len(zm.entries) != len(d["bitmap"]):
            raise CorruptMetadata(f"zone {zone}: bitmap length != directory length")
        return zm


class BufferPool:
    """Extent-sized buffers carved out of one anonymous mapping at mount."""

    def __init__(self, count, size):
        if count < 1:
            raise InvalidConfig("buffer pool must hold at least one buffer")
        self.size = size
        self.count = count
        self._mem = mmap.mmap(-1, count * size)
        self._view = memoryview(self._mem)
        self._free = list(range(count - 1, -1, -1))
        self.peak_in_use = 0

    @property
    def in_use(self):
        return self.count - len(self._free)

    def acquire(self) -> int:
        if not self._free:
            raise BufferPoolExhausted(f"all {self.count} extent buffers are held by writable files")
        idx = self._free.pop()
        self.peak_in_use = max(self.peak_in_use, self.in_use)
        return idx

    def release(self, idx):
        self._free.append(idx)

    def view(self, idx) -> memoryview:
        return self._view[idx * self.size:(idx + 1) * self.size]

    def close(self):
        try:
            self._view.release()
            self._mem.close()
        except BufferError:
            # A view is still referenced (typically by a traceback being
            # handled); the mapping is freed when that goes away.
            log.debug("buffer pool still referenced at close")


@dataclass
class MapperCounters:
    logical_bytes_written: int = 0
    logical_bytes_flushed: int = 0
    padding_bytes: int = 0
    gc_calls: int = 0
    gc_bytes_moved: int = 0
    gc_zones_reclaimed: int = 0
    zones_reset_without_move: int = 0
    commits: int = 0
    lost_bytes: int = 0
    per_stream_appended: dict = field(default_factory=dict)


@dataclass
class GcReport:
    gc_calls: int = 0
    bytes_moved: int = 0
    zones_reclaimed: int = 0


@dataclass
class MapperStats:
    logical_bytes_written: int
    logical_bytes_flushed: int
    physical_bytes_appended: int
    padding_bytes: int
    gc_calls: int
    gc_bytes_moved: int
    gc_zones_reclaimed: int
    zones_reset_without_move: int
    lost_bytes: int
    free_zones: int
    commits: int
    buffer_pool_size: int
    buffer_pool_peak_in_use: int
    stream_purity: dict
    per_stream_appended_bytes: dict

    @property
    def waf(self):
        if not self.logical_bytes_flushed:
            return 1.0
        return self.physical_bytes_appended / self.logical_bytes_flushed

    def to_json(self):
        doc = asdict(self)
        doc["waf"] = self.waf
        return doc


class Mapper:
    def __init__(self, device: ZonedDevice, config: MapperConfig, placement: PlacementEngine):
        if config.stream_budget < 1 or config.stream_budget + 1 > device.config.max_open_zones:
            raise InvalidConfig(
                f"stream_budget {config.stream_budget} + 1 relocation zone exceeds "
                f"max_open_zones {device.config.max_open_zones}"
            )
        fs = config.flush_size
        if fs % device.block_size or not MIN_EXTENT <= fs <= MAX_EXTENT or fs > device.zone_capacity:
            raise InvalidConfig(f"flush_size {fs} must be block-aligned within [{MIN_EXTENT}, {MAX_EXTENT}]")
        self.device = device
        self.config = config
        self.placement = placement
        self.store = MetadataStore(config.metadata_path, durable=config.fsync_metadata)
        self.block = device.block_size
        self.capacity = device.zone_capacity

        self.path_map: dict[str, str] = {}
        self.files: dict[str, FileRecord] = {}
        self.zones: dict[int, ZoneMeta] = {}
        self.current: dict[int, int] = {}
        self.free: list[int] = []
        self.pending_resets: set[int] = set()
        self.counters = MapperCounters()
        self.generation = 0
        self.next_uuid = 1
        self.observers = []
        # Set by the crash harness; consumed by the next commit.
        self.crash_point: CrashPoint | None = None
        # Called with each metadata document just before it is committed.
        self.commit_hook = None

        self._lru: OrderedDict[int, None] = OrderedDict()
        self._in_gc = False
        self._lock = threading.RLock()
        count = max(1, config.buffer_pool_bytes_per_stream * config.stream_budget // fs)
        self.pool = BufferPool(count, fs)

    # mount / persistence

    @classmethod
    def mount(cls, device, config, placement) -> Mapper:
        m = cls(device, config, placement)
        doc = m.store.load()
        if doc is not None:
            m._restore(doc)
        m._reconcile()
        return m

    def unmount(self):
        with self._lock:
            self.commit_metadata()
            self.pool.close()

    def _geometry(self):
        c = self.device.config
        return {"zone_count": c.zone_count, "zone_capacity": c.zone_capacity_bytes,
                "block_size": c.block_size_bytes}

    def _snapshot(self):
        files = {}
        for uuid, rec in self.files.items():
            entry = {
                "size": rec.flushed_size,
                "stream": rec.stream,
                "valid_tail": rec.valid_tail,
                "extents": [e.to_json() for e in rec.extents],
            }
            if rec.path is None:
                entry["orphan"] = True
            files[uuid] = entry
        counters = asdict(self.counters)
        counters["per_stream_appended"] = {str(k): v for k, v in counters["per_stream_appended"].items()}
        return {
            "version": FORMAT_VERSION,
            "generation": self.generation + 1,
            "geometry": self._geometry(),
            "path_map": dict(self.path_map),
            "files": files,
            "zones": {str(z): zm.to_json() for z, zm in sorted(self.zones.items())},
            "streams": {str(s): z for s, z in sorted(self.current.items())},
            "placement": self.placement.export_state(),
            "counters": counters,
            "next_uuid": self.next_uuid,
        }

    def _restore(self, doc):
        if doc["geometry"] != self._geometry():
            raise DeviceMismatch(f"metadata geometry {doc['geometry']} != device {self._geometry()}")
        self.generation = doc["generation"]
        self.next_uuid = doc["next_uuid"]
        self.path_map = dict(doc["path_map"])
        for uuid, f in doc["files"].items():
            rec = FileRecord(uuid, f["stream"], None)
            rec.extents = [Extent.from_json(e) for e in f["extents"]]
            rec.flushed_size = rec.size = f["size"]
            rec.reindex()
            self.files[uuid] = rec
        for path, uuid in self.path_map.items():
            if uuid not in self.files:
                raise CorruptMetadata(f"path {path!r} names unknown file {uuid}")
            self.files[uuid].path = path
        self.zones = {int(z): ZoneMeta.from_json(int(z), d) for z, d in doc["zones"].items()}
        self.current = {int(s): z for s, z in doc["streams"].items()}
        counters = dict(doc["counters"])
        counters["per_stream_appended"] = {int(k): v for k, v in counters["per_stream_appended"].items()}
        self.counters = MapperCounters(**counters)
        self.placement.import_state(doc["placement"])

    def _reconcile(self):
        """Bring RAM state in line with the device after mount."""
        report = self.device.zone_report()
        # Files unlinked while open never got their last close.
        for rec in [r for r in self.files.values() if r.path is None]:
            self._drop_file(rec)
        for info in report:
            zm = self.zones.get(info.id)
            if zm is None:
                if info.write_pointer or info.state is not ZoneState.EMPTY:
                    self.device.zone_reset(info.id)
                heapq.heappush(self.free, info.id)
                continue
            if zm.valid == 0:
                self._reset_zone(info.id, moved=False)
                continue
            end = max(o + n for (o, n, _), bit in zip(zm.entries, zm.bitmap) if bit)
            if info.write_pointer < end:
                raise CorruptMetadata(
                    f"zone {info.id}: write pointer {info.write_pointer} behind committed extent end {end}"
                )
        self.pending_resets.clear()
        c = self.counters
        c.lost_bytes = (self.device.counters.physical_bytes_appended
                        - c.logical_bytes_flushed - c.padding_bytes - c.gc_bytes_moved)

    def commit_metadata(self):
        with self._lock:
            for rec in self.files.values():
                if rec.fill:
                    self._flush(rec)
            doc = self._snapshot()
            if self.commit_hook is not None:
                self.commit_hook(doc)
            crash, self.crash_point = self.crash_point, None
            self.store.commit(doc, crash=crash)
            self.generation = doc["generation"]
            self.counters.commits += 1
            for zone in sorted(self.pending_resets):
                self._reset_zone(zone, moved=False)
            self.pending_resets.clear()

    # zone allocation

    def _touch(self, zone):
        self._lru[zone] = None
        self._lru.move_to_end(zone)

    def _ensure_open(self, zone):
        state = self.device.zones[zone].state
        if state is ZoneState.OPEN:
            self._touch(zone)
            return
        limit = self.config.stream_budget + (1 if self._in_gc else 0)
        while self.device.open_zone_count() >= limit:
            victim = next((z for z in self._lru if z != zone
                           and self.device.zones[z].state is ZoneState.OPEN), None)
            if victim is None:
                break
            self.device.zone_close(victim)
            del self._lru[victim]
        self._touch(zone)

    def _retire(self, stream, zone):
        if self.device.zones[zone].state is not ZoneState.FULL:
            self.device.zone_finish(zone)
        self._lru.pop(zone, None)
        del self.current[stream]
        if self.zones[zone].valid == 0:
            self.pending_resets.add(zone)

    def _zone_for(self, stream, nbytes):
        tried_gc = False
        while True:
            zone = self.current.get(stream)
            if zone is not None:
                if self.device.zones[zone].write_pointer + nbytes <= self.capacity:
                    self._ensure_open(zone)
                    return zone
                self._retire(stream, zone)
            if not self._in_gc and not tried_gc and len(self.free) < self.config.gc_free_zone_threshold:
                tried_gc = True
                try:
                    self._collect()
                except GcStall as exc:
                    log.warning("gc stalled: %s", exc)
                continue
            if not self.free:
                raise NoFreeZones(f"no free zone for stream {stream}")
            zone = heapq.heappop(self.free)
            self.zones[zone] = ZoneMeta(zone, stream)
            self.current[stream] = zone
            self._ensure_open(zone)
            return zone

    def _append(self, stream, uuid, payload, used, relocated=False):
        zone = self._zone_for(stream, len(payload))
        offset = self.device.zone_append(zone, payload)
        self.zones[zone].add(offset, len(payload), uuid)
        if self.device.zones[zone].state is ZoneState.FULL:
            # Filled exactly: retire now so the zone can be a GC victim.
            self._retire(stream, zone)
        per = self.counters.per_stream_appended
        per[stream] = per.get(stream, 0) + len(payload)
        for obs in self.observers:
            obs.on_append(zone, uuid, stream, len(payload), used, relocated)
        return zone, offset

    def _reset_zone(self, zone, moved):
        zm = self.zones.pop(zone)
        for s, z in list(self.current.items()):
            if z == zone:
                del self.current[s]
        self._lru.pop(zone, None)
        self.device.zone_reset(zone)
        heapq.heappush(self.free, zone)
        if not moved and zm.entries:
            self.counters.zones_reset_without_move += 1
        for obs in self.observers:
            obs.on_reset(zone)

    def _invalidate(self, ext: Extent):
        zm = self.zones[ext.zone]
        zm.invalidate(ext.offset)
        if zm.valid == 0 and (ext.zone not in self.current.values()
                              or self.device.zones[ext.zone].state is ZoneState.FULL):
            self.pending_resets.add(ext.zone)

    # buffering

    def _flush(self, rec: FileRecord):
        n = rec.fill
        if not n:
            return None
        plen = _round_up(n, self.block)
        buf = self.pool.view(rec.buffer)
        if plen > n:
            buf[n:plen] = bytes(plen - n)
        zone, offset = self._append(rec.stream, rec.uuid, buf[:plen], n)
        group = self.placement.record_write(rec.stream, n)
        ext = Extent(zone, offset, plen, n, group)
        rec.starts.append(rec.flushed_size)
        rec.extents.append(ext)
        rec.flushed_size += n
        rec.fill = 0
        self.counters.logical_bytes_flushed += n
        self.counters.padding_bytes += plen - n
        return ext

    # file operations

    def create_or_open(self, path, flags: OpenFlag = OpenFlag.READ, size_hint=None) -> str:
        with self._lock:
            uuid = self.path_map.get(path)
            if uuid is None:
                if OpenFlag.CREATE not in flags:
                    raise NotFound(path)
                hint = self.placement.get_hint(FileMeta(path, flags, size_hint))
                directive = resolve_zones(hint)
                uuid = f"{self.next_uuid:016x}"
                self.next_uuid += 1
                rec = FileRecord(uuid, directive.stream, path)
                self.files[uuid] = rec
                self.path_map[path] = uuid
            rec = self.files[uuid]
            if flags.writable and rec.writers == 0:
                rec.buffer = self.pool.acquire()
            rec.handles += 1
            if flags.writable:
                rec.writers += 1
            if OpenFlag.TRUNCATE in flags and rec.size:
                self._truncate(rec, 0)
            return uuid

    def lookup(self, path):
        uuid = self.path_map.get(path)
        if uuid is None:
            raise NotFound(path)
        return uuid

    def record(self, uuid) -> FileRecord:
        try:
            return self.files[uuid]
        except KeyError:
            raise UnknownUuid(uuid) from None

    def write(self, uuid, payload, offset=None) -> int:
        with self._lock:
            rec = self.record(uuid)
            if not rec.writers:
                raise NotOpenForWrite(uuid)
            if offset is not None and offset != rec.size:
                raise NonAppendWrite(f"{uuid}: write at {offset}, file size is {rec.size}")
            mv = memoryview(payload)
            buf = self.pool.view(rec.buffer)
            limit = self.config.flush_size
            while mv:
                take = min(limit - rec.fill, len(mv))
                buf[rec.fill:rec.fill + take] = mv[:take]
                rec.fill += take
                mv = mv[take:]
                if rec.fill == limit:
                    self._flush(rec)
            rec.size += len(payload)
            self.counters.logical_bytes_written += len(payload)
            return len(payload)

    def read(self, uuid, offset, length) -> bytes:
        with self._lock:
            rec = self.record(uuid)
            if offset < 0 or length < 0 or offset + length > rec.size:
                raise OutOfRange(f"{uuid}: [{offset}, {offset + length}) beyond size {rec.size}")
            out = bytearray()
            pos, end = offset, offset + length
            if pos < rec.flushed_size:
                i = bisect.bisect_right(rec.starts, pos) - 1
                while pos < min(end, rec.flushed_size):
                    ext, start = rec.extents[i], rec.starts[i]
                    skip = pos - start
                    take = min(ext.used - skip, end - pos)
                    out += self.device.zone_read(ext.zone, ext.offset + skip, take)
                    pos += take
                    i += 1
            if pos < end:
                lo = pos - rec.flushed_size
                out += self.pool.view(rec.buffer)[lo:lo + end - pos]
            return bytes(out)

    def extents_for(self, uuid, offset, length):
        """Extents overlapping a logical byte range (readahead support)."""
        with self._lock:
            rec = self.record(uuid)
            end = min(offset + length, rec.flushed_size)
            if offset >= end:
                return []
            i = max(bisect.bisect_right(rec.starts, offset) - 1, 0)
            j = bisect.bisect_left(rec.starts, end)
            return [(rec.starts[k], rec.extents[k]) for k in range(i, j)]

    def fsync(self, uuid):
        with self._lock:
            self.record(uuid)
            self.commit_metadata()

    def close(self, uuid, writable=None):
        with self._lock:
            rec = self.record(uuid)
            if rec.handles == 0:
                raise UnknownUuid(f"{uuid} is not open")
            if writable is None:
                writable = rec.writers > 0
            rec.handles -= 1
            if writable:
                rec.writers -= 1
            if rec.path is None and rec.handles == 0:
                self._drop_file(rec)
                self.commit_metadata()
                return
            if writable:
                self.commit_metadata()
                if rec.writers == 0 and rec.buffer is not None:
                    self.pool.release(rec.buffer)
                    rec.buffer = None

    def _drop_file(self, rec: FileRecord):
        for ext in rec.extents:
            self._invalidate(ext)
        if rec.buffer is not None:
            self.pool.release(rec.buffer)
            rec.buffer = None
        del self.files[rec.uuid]

    def _unlink(self, path):
        uuid = self.path_map.pop(path, None)
        if uuid is None:
            raise NotFound(path)
        rec = self.files[uuid]
        rec.path = None
        if rec.handles == 0:
            self._drop_file(rec)

    def unlink(self, path):
        with self._lock:
            self._unlink(path)
            self._collect()
            self.commit_metadata()

    def rename(self, old, new):
        with self._lock:
            uuid = self.path_map.get(old)
            if uuid is None:
                raise NotFound(old)
            if old == new:
                return
            if new in self.path_map:
                self._unlink(new)
            del self.path_map[old]
            self.path_map[new] = uuid
            self.files[uuid].path = new
            self.commit_metadata()

    def _truncate(self, rec: FileRecord, new_size):
        if new_size >= rec.flushed_size:
            rec.fill = new_size - rec.flushed_size
        else:
            rec.fill = 0
            keep = bisect.bisect_left(rec.starts, new_size)
            for ext in rec.extents[keep:]:
                self._invalidate(ext)
            del rec.extents[keep:]
            del rec.starts[keep:]
            if rec.extents:
                last, start = rec.extents[-1], rec.starts[-1]
                last.used = min(last.used, new_size - start)
            rec.flushed_size = new_size
        rec.size = new_size

    def truncate(self, uuid, new_size):
        with self._lock:
            rec = self.record(uuid)
            if new_size > rec.size:
                raise TruncateUp(f"{uuid}: truncate to {new_size} > size {rec.size}")
            if new_size < 0:
                raise OutOfRange(new_size)
            self._truncate(rec, new_size)
            self.commit_metadata()

    # garbage collection

    def gc_candidates(self):
        return [z for z, zm in self.zones.items()
                if z not in self.pending_resets
                and z not in self.current.values()
                and self.device.zones[z].state is ZoneState.FULL]

    def select_gc_victim(self):
        best = None
        for z in self.gc_candidates():
            key = (self.zones[z].valid, z)
            if best is None or key < best:
                best = key
        return None if best is None else best[1]

    def _relocate(self, victim) -> int:
        zm = self.zones[victim]
        moved = 0
        for (offset, length, uuid), bit in zip(list(zm.entries), list(zm.bitmap)):
            if not bit:
                continue
            rec = self.files[uuid]
            idx = next(i for i, e in enumerate(rec.extents) if e.zone == victim and e.offset == offset)
            ext = rec.extents[idx]
            size = _round_up(ext.used, self.block)
            data = self.device.zone_read(victim, offset, size)
            zone, new_offset = self._append(rec.stream, uuid, data, ext.used, relocated=True)
            zm.invalidate(offset)
            rec.extents[idx] = Extent(zone, new_offset, size, ext.used, ext.group, relocated=True)
            moved += size
        self.counters.gc_bytes_moved += moved
        return moved

    def _collect(self) -> GcReport:
        report = GcReport()
        threshold = self.config.gc_free_zone_threshold
        if self._in_gc or len(self.free) + len(self.pending_resets) >= threshold:
            return report
        self.counters.gc_calls += 1
        report.gc_calls = 1
        self._in_gc = True
        try:
            rounds = 0
            while len(self.free) + len(self.pending_resets) < threshold:
                candidates = self.gc_candidates()
                if not any(self.zones[z].invalid for z in candidates):
                    raise GcStall(f"{len(candidates)} full zones, none with invalid extents")
                if rounds > len(self.zones):
                    raise GcStall("relocation is not freeing zones")
                victim = self.select_gc_victim()
                report.bytes_moved += self._relocate(victim)
                self.pending_resets.add(victim)
                self.counters.gc_zones_reclaimed += 1
                report.zones_reclaimed += 1
                rounds += 1
        finally:
            self._in_gc = False
        return report

    def gc_check(self) -> GcReport:
        with self._lock:
            report = self._collect()
            if report.zones_reclaimed or self.pending_resets:
                self.commit_metadata()
            return report

    def stats(self) -> MapperStats:
        with self._lock:
            purity = {}
            for z, zm in self.zones.items():
                streams = {self.files[u].stream for _, _, u in zm.entries if u in self.files}
                purity[z] = 1.0 if len(streams - {zm.stream}) == 0 else 0.0
            c = self.counters
            return MapperStats(
                logical_bytes_written=c.logical_bytes_written,
                logical_bytes_flushed=c.logical_bytes_flushed,
                physical_bytes_appended=self.device.counters.physical_bytes_appended,
                padding_bytes=c.padding_bytes,
                gc_calls=c.gc_calls,
                gc_bytes_moved=c.gc_bytes_moved,
                gc_zones_reclaimed=c.gc_zones_reclaimed,
                zones_reset_without_move=c.zones_reset_without_move,
                lost_bytes=c.lost_bytes,
                free_zones=len(self.free),
                commits=c.commits,
                buffer_pool_size=self.pool.count,
                buffer_pool_peak_in_use=self.pool.peak_in_use,
                stream_purity=purity,
                per_stream_appended_bytes=dict(sorted(c.per_stream_appended.items())),
            )


mount = Mapper.mount
