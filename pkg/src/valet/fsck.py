"""Offline consistency check of committed mapper metadata.

Works from persisted state alone: the metadata directory and, optionally,
a saved device image. Every mapper invariant that is visible in that state
is checked; anything else (for example orphans awaiting their last close)
is reported as a note.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .device import ZonedDevice, ZoneState
from .errors import CorruptMetadata
from .mapper import MAX_EXTENT, MIN_EXTENT
from .metadata import MetadataStore


@dataclass
class FsckReport:
    errors: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    files: int = 0
    zones: int = 0
    extents: int = 0
    generation: int | None = None

    @property
    def clean(self):
        return not self.errors

    def to_json(self):
        return {"clean": self.clean, "errors": self.errors, "notes": self.notes, "files": self.files,
                "zones": self.zones, "extents": self.extents, "generation": self.generation}


def fsck(meta_dir, device: ZonedDevice | None = None) -> FsckReport:
    report = FsckReport()
    err = report.errors.append
    try:
        doc = MetadataStore(meta_dir).load()
    except CorruptMetadata as exc:
        err(str(exc))
        return report
    if doc is None:
        return report
    report.generation = doc["generation"]
    geo = doc["geometry"]
    block = geo["block_size"]
    if device is not None:
        c = device.config
        actual = {"zone_count": c.zone_count, "zone_capacity": c.zone_capacity_bytes,
                  "block_size": c.block_size_bytes}
        if actual != geo:
            err(f"geometry {geo} does not match device {actual}")
            return report

    files, zones, path_map = doc["files"], doc["zones"], doc["path_map"]
    report.files, report.zones = len(files), len(zones)

    # path map: bijective over live files
    named = defaultdict(list)
    for path, uuid in path_map.items():
        named[uuid].append(path)
        if uuid not in files:
            err(f"path {path!r} names missing file {uuid}")
    for uuid, paths in named.items():
        if len(paths) > 1:
            err(f"file {uuid} has several paths {sorted(paths)}")
    for uuid, f in files.items():
        if uuid not in named:
            if f.get("orphan"):
                report.notes.append(f"file {uuid} is unlinked but was open at commit")
            else:
                err(f"file {uuid} has no path and is not marked orphan")

    # zone directories
    directory = {}  # (zone, offset) -> [length, uuid, bit, referenced]
    for z, zm in zones.items():
        zone = int(z)
        if not 0 <= zone < geo["zone_count"]:
            err(f"zone {zone} out of range")
            continue
        entries, bitmap = zm["extents"], zm["bitmap"]
        if len(entries) != len(bitmap):
            err(f"zone {zone}: bitmap length {len(bitmap)} != directory length {len(entries)}")
            continue
        if set(bitmap) - {"0", "1"}:
            err(f"zone {zone}: bitmap has characters other than 0/1")
            continue
        end = 0
        for e, bit in zip(entries, bitmap):
            if e["offset"] < end:
                err(f"zone {zone}: extent at {e['offset']} overlaps the previous one")
            end = e["offset"] + e["len"]
            directory[(zone, e["offset"])] = [e["len"], e["uuid"], bit == "1", False]
        if end > geo["zone_capacity"]:
            err(f"zone {zone}: directory runs past zone capacity")
        if device is not None:
            info = device.zones[zone]
            if end > info.write_pointer:
                err(f"zone {zone}: directory ends at {end}, beyond write pointer {info.write_pointer}")
            if bitmap and "1" not in bitmap and info.state is ZoneState.FULL:
                report.notes.append(f"zone {zone} is full and wholly invalid (reclaimable without moves)")

    # file extents against the directories
    for uuid, f in files.items():
        total = 0
        for i, e in enumerate(f["extents"]):
            report.extents += 1
            where = f"file {uuid} extent {i} (zone {e['zone']} @ {e['offset']})"
            if e["len"] % block:
                err(f"{where}: length {e['len']} not block aligned")
            if not MIN_EXTENT <= e["len"] <= MAX_EXTENT:
                err(f"{where}: length {e['len']} outside [{MIN_EXTENT}, {MAX_EXTENT}]")
            if not 0 < e["used"] <= e["len"]:
                err(f"{where}: payload length {e['used']} outside (0, {e['len']}]")
            total += e["used"]
            entry = directory.get((e["zone"], e["offset"]))
            if entry is None:
                err(f"{where}: dangling, not in the zone directory")
                continue
            length, owner, bit, referenced = entry
            if owner != uuid:
                err(f"{where}: directory says the extent belongs to {owner}")
            if length != e["len"]:
                err(f"{where}: directory length {length} != {e['len']}")
            if not bit:
                err(f"{where}: referenced but marked invalid in the bitmap")
            if referenced:
                err(f"{where}: shared with another extent reference")
            entry[3] = True
            if zones[str(e["zone"])]["stream"] != f["stream"]:
                err(f"{where}: file stream {f['stream']} written into a zone of stream "
                    f"{zones[str(e['zone'])]['stream']}")
        if total != f["size"]:
            err(f"file {uuid}: extents hold {total} bytes but size is {f['size']}")
        tail = f["extents"][-1]["used"] if f["extents"] else 0
        if f.get("valid_tail", tail) != tail:
            err(f"file {uuid}: valid_tail {f['valid_tail']} != last extent payload {tail}")

    for (zone, offset), (length, owner, bit, referenced) in sorted(directory.items()):
        if bit and not referenced:
            err(f"zone {zone} @ {offset}: marked valid but no file references it (owner {owner})")

    # group sequentiality over first-write extents
    groups = defaultdict(list)
    for f in files.values():
        for e in f["extents"]:
            if not e.get("relocated"):
                groups[e["zone"]].append((e["offset"], e["group"]))
    for zone, items in sorted(groups.items()):
        items.sort()
        for (o1, g1), (o2, g2) in zip(items, items[1:]):
            if g2 < g1:
                err(f"zone {zone}: group {g2} at {o2} follows group {g1} at {o1}")
                break
    return report
