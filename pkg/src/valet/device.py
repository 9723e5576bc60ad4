"""In-memory zoned block device.

Zones are append-only with a write pointer; a small conventional region
accepts in-place writes. Every physical byte is counted so the layers above
can be audited for write amplification.
"""

from __future__ import annotations

import enum
import json
import struct
import threading
from dataclasses import asdict, dataclass, field

from .errors import (
    InvalidConfig,
    NotOpen,
    OpenZoneLimitExceeded,
    OutOfRange,
    ReadBeyondWritePointer,
    UnalignedPayload,
    UnknownZone,
    ZoneFull,
)

KiB = 1024
MiB = 1024 * KiB

DEFAULT_MAX_OPEN_ZONES = 14

SNAPSHOT_MAGIC = b"VZNS"
SNAPSHOT_VERSION = 1


class ZoneState(str, enum.Enum):
    EMPTY = "empty"
    OPEN = "open"
    CLOSED = "closed"
    FULL = "full"


@dataclass(frozen=True)
class DeviceConfig:
    zone_count: int = 64
    zone_capacity_bytes: int = 1 * MiB
    block_size_bytes: int = 4096
    max_open_zones: int = DEFAULT_MAX_OPEN_ZONES
    conventional_region_bytes: int = 4 * MiB

    def validate(self):
        for name in ("zone_count", "zone_capacity_bytes", "block_size_bytes", "max_open_zones"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be a positive integer")
        if self.conventional_region_bytes < 0:
            raise InvalidConfig("conventional_region_bytes must be non-negative")
        if self.zone_capacity_bytes % self.block_size_bytes:
            raise InvalidConfig(
                f"zone capacity {self.zone_capacity_bytes} is not a multiple of "
                f"block size {self.block_size_bytes}"
            )
        if self.max_open_zones > self.zone_count:
            raise InvalidConfig("max_open_zones exceeds zone_count")


@dataclass
class DeviceCounters:
    physical_bytes_appended: int = 0
    zone_resets: int = 0
    zone_finishes: int = 0
    conventional_bytes_written: int = 0


@dataclass
class Zone:
    id: int
    state: ZoneState = ZoneState.EMPTY
    data: bytearray = field(default_factory=bytearray)

    @property
    def write_pointer(self):
        return len(self.data)


@dataclass(frozen=True)
class ZoneInfo:
    id: int
    state: ZoneState
    write_pointer: int


class ZonedDevice:
    """Simulated zoned namespace with a conventional (random-write) region."""

    def __init__(self, config: DeviceConfig | None = None):
        config = config or DeviceConfig()
        config.validate()
        self.config = config
        self.zones = [Zone(i) for i in range(config.zone_count)]
        self.conventional = bytearray(config.conventional_region_bytes)
        self.counters = DeviceCounters()
        self._open: set[int] = set()
        self._lock = threading.RLock()

    @property
    def block_size(self):
        return self.config.block_size_bytes

    @property
    def zone_capacity(self):
        return self.config.zone_capacity_bytes

    def _zone(self, zone_id) -> Zone:
        if not isinstance(zone_id, int) or not 0 <= zone_id < len(self.zones):
            raise UnknownZone(zone_id)
        return self.zones[zone_id]

    def open_zone_count(self):
        return len(self._open)

    def zone_append(self, zone_id, payload) -> int:
        n = len(payload)
        if n <= 0 or n % self.block_size:
            raise UnalignedPayload(f"payload of {n} bytes is not a positive multiple of {self.block_size}")
        with self._lock:
            zone = self._zone(zone_id)
            if zone.state is ZoneState.FULL:
                raise ZoneFull(zone_id)
            start = zone.write_pointer
            if start + n > self.zone_capacity:
                raise ZoneFull(f"zone {zone_id}: {n} bytes at {start} exceeds capacity")
            if zone.state is not ZoneState.OPEN:
                if len(self._open) >= self.config.max_open_zones:
                    raise OpenZoneLimitExceeded(
                        f"zone {zone_id}: {len(self._open)} zones already open"
                    )
                zone.state = ZoneState.OPEN
                self._open.add(zone_id)
            zone.data += payload
            self.counters.physical_bytes_appended += n
            if zone.write_pointer == self.zone_capacity:
                zone.state = ZoneState.FULL
                self._open.discard(zone_id)
            return start

    def zone_read(self, zone_id, offset, length) -> bytes:
        with self._lock:
            zone = self._zone(zone_id)
            if offset < 0 or length < 0 or offset + length > zone.write_pointer:
                raise ReadBeyondWritePointer(
                    f"zone {zone_id}: [{offset}, {offset + length}) beyond wp {zone.write_pointer}"
                )
            return bytes(zone.data[offset:offset + length])

    def zone_reset(self, zone_id):
        with self._lock:
            zone = self._zone(zone_id)
            if zone.state is ZoneState.EMPTY:
                return
            zone.state = ZoneState.EMPTY
            zone.data = bytearray()
            self._open.discard(zone_id)
            self.counters.zone_resets += 1

    def zone_finish(self, zone_id):
        with self._lock:
            zone = self._zone(zone_id)
            # Closed zones still hold device resources, so they can be finished too.
            if zone.state not in (ZoneState.OPEN, ZoneState.CLOSED):
                raise NotOpen(f"zone {zone_id} is {zone.state.value}")
            zone.state = ZoneState.FULL
            self._open.discard(zone_id)
            self.counters.zone_finishes += 1

    def zone_close(self, zone_id):
        """Release the open-zone slot; the next append reopens the zone."""
        with self._lock:
            zone = self._zone(zone_id)
            if zone.state is not ZoneState.OPEN:
                raise NotOpen(f"zone {zone_id} is {zone.state.value}")
            zone.state = ZoneState.CLOSED
            self._open.discard(zone_id)

    def zone_report(self) -> list[ZoneInfo]:
        with self._lock:
            return [ZoneInfo(z.id, z.state, z.write_pointer) for z in self.zones]

    def _check_conventional(self, offset, length):
        if offset < 0 or length < 0 or offset + length > len(self.conventional):
            raise OutOfRange(
                f"conventional [{offset}, {offset + length}) outside region of {len(self.conventional)}"
            )

    def conventional_write(self, offset, payload):
        with self._lock:
            self._check_conventional(offset, len(payload))
            self.conventional[offset:offset + len(payload)] = payload
            self.counters.conventional_bytes_written += len(payload)

    def conventional_read(self, offset, length) -> bytes:
        with self._lock:
            self._check_conventional(offset, length)
            return bytes(self.conventional[offset:offset + length])

    def clone(self) -> ZonedDevice:
        """Deep copy of the persistent state (what survives a host crash)."""
        with self._lock:
            other = ZonedDevice(self.config)
            for src, dst in zip(self.zones, other.zones):
                dst.data = bytearray(src.data)
                # Open zones are closed by a power cycle.
                dst.state = ZoneState.CLOSED if src.state is ZoneState.OPEN else src.state
            other.conventional[:] = self.conventional
            other.counters = DeviceCounters(**asdict(self.counters))
            return other

    def save(self, path):
        with self._lock:
            header = {
                "config": asdict(self.config),
                "counters": asdict(self.counters),
                "zones": [[z.state.value, z.write_pointer] for z in self.zones],
            }
            raw = json.dumps(header, sort_keys=True).encode()
            with open(path, "wb") as f:
                f.write(SNAPSHOT_MAGIC)
                f.write(struct.pack("<II", SNAPSHOT_VERSION, len(raw)))
                f.write(raw)
                for z in self.zones:
                    f.write(z.data)
                f.write(self.conventional)

    @classmethod
    def load(cls, path) -> ZonedDevice:
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a device snapshot")
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        pos = 12
        header = json.loads(blob[pos:pos + hlen])
        pos += hlen
        dev = cls(DeviceConfig(**header["config"]))
        for zone, (state, wp) in zip(dev.zones, header["zones"]):
            zone.data = bytearray(blob[pos:pos + wp])
            pos += wp
            zone.state = ZoneState(state)
            if zone.state is ZoneState.OPEN:
                zone.state = ZoneState.CLOSED
        dev.conventional[:] = blob[pos:pos + len(dev.conventional)]
        dev.counters = DeviceCounters(**header["counters"])
        return dev
