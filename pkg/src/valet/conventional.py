"""In-place-update file store on the device's conventional region.

Files routed here (lock, manifest and config files, writable mmaps, and all
files in hint-only mode) accept writes at any offset. Working copies live in
RAM; on sync, dirty blocks are written copy-on-write into free blocks and the
block table is replaced atomically, so a crash exposes each file as of its
last sync.
"""

from __future__ import annotations

import heapq
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .device import ZonedDevice
from .errors import NoSpace, NotFound, OutOfRange
from .placement import OpenFlag

TABLE_NAME = "conventional.json"


@dataclass
class _File:
    name: str | None
    content: bytearray = field(default_factory=bytearray)
    blocks: list[int] = field(default_factory=list)  # durable blocks, in file order
    dirty: set[int] = field(default_factory=set)
    handles: int = 0


class ConventionalStore:
    def __init__(self, device: ZonedDevice, meta_dir, durable=True):
        self.device = device
        self.block = device.block_size
        self.path = Path(meta_dir) / TABLE_NAME
        self.durable = durable
        self.table: dict[str, dict] = {}
        self.names: dict[str, int] = {}
        self.files: dict[int, _File] = {}
        self._next_id = 1
        self._lock = threading.RLock()
        if self.path.exists():
            self.table = json.loads(self.path.read_text())["files"]
        used = {b for entry in self.table.values() for b in entry["blocks"]}
        nblocks = device.config.conventional_region_bytes // self.block
        self.free = [b for b in range(nblocks) if b not in used]
        heapq.heapify(self.free)

    def exists(self, name):
        return name in self.names or name in self.table

    def _load(self, name) -> int:
        if name in self.names:
            return self.names[name]
        entry = self.table[name]
        content = bytearray()
        for b in entry["blocks"]:
            content += self.device.conventional_read(b * self.block, self.block)
        del content[entry["size"]:]
        fid = self._next_id
        self._next_id += 1
        self.files[fid] = _File(name, content, list(entry["blocks"]))
        self.names[name] = fid
        return fid

    def open(self, name, flags: OpenFlag) -> int:
        with self._lock:
            if not self.exists(name):
                if OpenFlag.CREATE not in flags:
                    raise NotFound(name)
                fid = self._next_id
                self._next_id += 1
                self.files[fid] = _File(name)
                self.names[name] = fid
            fid = self._load(name)
            f = self.files[fid]
            f.handles += 1
            if OpenFlag.TRUNCATE in flags:
                self._truncate(f, 0)
            return fid

    def size(self, fid):
        return len(self.files[fid].content)

    def write(self, fid, payload, offset):
        with self._lock:
            f = self.files[fid]
            end = offset + len(payload)
            if end > len(f.content):
                f.content.extend(bytes(end - len(f.content)))
            f.content[offset:end] = payload
            if payload:
                f.dirty.update(range(offset // self.block, (end - 1) // self.block + 1))
            return len(payload)

    def read(self, fid, offset, length):
        with self._lock:
            f = self.files[fid]
            if offset < 0 or length < 0 or offset + length > len(f.content):
                raise OutOfRange(f"[{offset}, {offset + length}) beyond size {len(f.content)}")
            return bytes(f.content[offset:offset + length])

    def _truncate(self, f: _File, size):
        if size < len(f.content):
            del f.content[size:]
            if size % self.block:
                f.dirty.add(size // self.block)
        else:
            old = len(f.content)
            f.content.extend(bytes(size - old))
            if size > old:
                f.dirty.update(range(old // self.block, (size - 1) // self.block + 1))

    def truncate(self, fid, size):
        with self._lock:
            self._truncate(self.files[fid], size)

    def _commit_table(self):
        doc = {"version": 1, "files": self.table}
        tmp = self.path.with_suffix(".tmp")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w") as out:
            json.dump(doc, out, sort_keys=True)
            if self.durable:
                out.flush()
                os.fsync(out.fileno())
        os.replace(tmp, self.path)

    def _alloc(self):
        if not self.free:
            raise NoSpace("conventional region is full")
        return heapq.heappop(self.free)

    def fsync(self, fid):
        with self._lock:
            f = self.files[fid]
            if f.name is None:
                return
            nblocks = -(-len(f.content) // self.block)
            blocks = f.blocks[:nblocks]
            released = f.blocks[nblocks:]
            for i in sorted(f.dirty | set(range(len(blocks), nblocks))):
                if i >= nblocks:
                    continue
                chunk = bytes(f.content[i * self.block:(i + 1) * self.block])
                chunk += bytes(self.block - len(chunk))
                new = self._alloc()
                self.device.conventional_write(new * self.block, chunk)
                if i < len(blocks):
                    released.append(blocks[i])
                    blocks[i] = new
                else:
                    blocks.append(new)
            self.table[f.name] = {"size": len(f.content), "blocks": blocks}
            self._commit_table()
            f.blocks = blocks
            f.dirty.clear()
            for b in released:
                heapq.heappush(self.free, b)

    def close(self, fid, writable):
        with self._lock:
            f = self.files[fid]
            if writable:
                self.fsync(fid)
            f.handles -= 1
            if f.handles == 0:
                if f.name is None:
                    for b in f.blocks:
                        heapq.heappush(self.free, b)
                else:
                    del self.names[f.name]
                del self.files[fid]

    def unlink(self, name):
        with self._lock:
            if not self.exists(name):
                raise NotFound(name)
            fid = self.names.pop(name, None)
            entry = self.table.pop(name, None)
            self._commit_table()
            if fid is not None:
                self.files[fid].name = None
                if self.files[fid].handles == 0:
                    del self.files[fid]
                    fid = None
            if fid is None and entry:
                for b in entry["blocks"]:
                    heapq.heappush(self.free, b)

    def rename(self, old, new):
        with self._lock:
            if not self.exists(old):
                raise NotFound(old)
            if old == new:
                return
            if self.exists(new):
                self.unlink(new)
            fid = self.names.pop(old, None)
            if fid is not None:
                self.files[fid].name = new
                self.names[new] = fid
            if old in self.table:
                self.table[new] = self.table.pop(old)
            self._commit_table()

    def listdir(self):
        return sorted(set(self.names) | set(self.table))
