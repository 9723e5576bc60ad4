"""Trace replay through the facade, verified against the shadow oracle.

Every read is compared byte for byte with the oracle. Crash checks fork the
run: the device is cloned (what survives a power cut), the metadata
directory is copied, a second facade is mounted on the copies, and its
whole visible state is compared with what the oracle says was durable.
The original run then continues, so one pass can check many crash points.
"""

from __future__ import annotations

import logging
import random
import shutil
import tempfile
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..device import DeviceConfig, MiB, ZonedDevice
from ..errors import NonAppendWrite, NotFound, TruncateUp, ValetError, VerificationFailure
from ..mapper import MapperConfig
from ..metadata import CRASH_POINTS, CrashPoint, MetadataStore, SimulatedCrash, encode
from ..placement import FileMeta, OpenFlag, builtin_rules
from ..vfs import CONVENTIONAL, MAPPER, Mode, Vfs
from .oracle import ShadowFS
from .policies import make_placement
from .trace import TraceOp, payload

log = logging.getLogger(__name__)

BETWEEN = "between"
CRASH_KINDS = (BETWEEN,) + CRASH_POINTS
_VERIFY_CHUNK = 1 * MiB
# About 1.2x the peak zone footprint of the default LSM trace under stream
# separation, so that free-space pressure depends on placement quality.
DEFAULT_GEOMETRY = "32x1MiB/14"
DEVICE_IMAGE = "device.img"


def parse_geometry(text) -> DeviceConfig:
    """``"64x1MiB"`` or ``"64x1MiB/14"`` (zones x capacity / max open zones)."""
    units = {"KiB": 1 << 10, "MiB": 1 << 20, "GiB": 1 << 30, "": 1}
    try:
        zones, rest = text.split("x", 1)
        cap, _, max_open = rest.partition("/")
        unit = next(u for u in ("KiB", "MiB", "GiB", "") if cap.endswith(u))
        capacity = int(cap[:len(cap) - len(unit)] if unit else cap) * units[unit]
        cfg = DeviceConfig(zone_count=int(zones), zone_capacity_bytes=capacity)
        if max_open:
            cfg = replace(cfg, max_open_zones=int(max_open))
    except (ValueError, StopIteration):
        raise ValueError(f"bad geometry {text!r}; expected e.g. 64x1MiB/14") from None
    cfg.validate()
    return cfg


@dataclass
class Testbed:
    """Everything besides the trace that determines a replay."""

    __test__ = False  # not a pytest class despite the name

    policy: str = "valet"
    device: DeviceConfig = field(default_factory=lambda: parse_geometry(DEFAULT_GEOMETRY))
    mode: Mode = Mode.HOST_MANAGED
    stream_budget: int = 8
    gc_free_zone_threshold: int = 4
    buffer_pool_bytes_per_stream: int = 32 * MiB
    flush_size: int = 512 * 1024
    seed: int = 0
    rules: object = None
    # Real fsyncs on the metadata directory; off by default for speed since
    # crash checks clone state in-process instead of cutting power.
    fsync_metadata: bool = False

    def placement(self):
        return make_placement(self.policy, self.device.zone_capacity_bytes, self.stream_budget,
                              self.seed, self.rules)

    def mapper_config(self, meta_dir) -> MapperConfig:
        return MapperConfig(
            metadata_path=str(meta_dir),
            stream_budget=self.stream_budget,
            gc_free_zone_threshold=self.gc_free_zone_threshold,
            buffer_pool_bytes_per_stream=self.buffer_pool_bytes_per_stream,
            flush_size=self.flush_size,
            fsync_metadata=self.fsync_metadata,
        )

    def mount(self, device: ZonedDevice, meta_dir) -> Vfs:
        return Vfs.mount(device, meta_dir, self.placement(), mode=self.mode,
                         mapper_config=self.mapper_config(meta_dir))


class ZoneClassTracker:
    """Mapper observer recording which reference classes share each zone.

    A reference class is (tenant, stream under the combined rule set), i.e.
    the separation an ideal placement would keep. A zone lifetime (from
    first append to reset) holding more than one class is one interleaving
    violation.
    """

    def __init__(self):
        self.rules = builtin_rules("valet")
        self.class_of: dict[str, tuple] = {}
        self.zone_classes: dict[int, set] = {}
        self.violations = 0
        self.relocated_bytes = 0
        self.tenant_bytes: dict[int, int] = {}
        self._lock = threading.Lock()

    def register(self, uuid, tenant, path):
        with self._lock:
            self.class_of.setdefault(uuid, (tenant, self.rules.stream_for(FileMeta(path))))

    def on_append(self, zone, uuid, stream, nbytes, used, relocated):
        with self._lock:
            cls = self.class_of.get(uuid, (None, None))
            classes = self.zone_classes.setdefault(zone, set())
            if cls not in classes:
                classes.add(cls)
                if len(classes) == 2:
                    self.violations += 1
            if relocated:
                self.relocated_bytes += nbytes
            else:
                self.tenant_bytes[cls[0]] = self.tenant_bytes.get(cls[0], 0) + used

    def on_reset(self, zone):
        with self._lock:
            self.zone_classes.pop(zone, None)

    def class_purity(self):
        live = [c for c in self.zone_classes.values() if c]
        if not live:
            return 1.0
        return sum(1 for c in live if len(c) == 1) / len(live)


@dataclass
class CrashCheck:
    seq: int
    kind: str
    files: int
    ok: bool
    detail: str = ""


@dataclass
class ReplayMetrics:
    policy: str
    ops: int
    reads_verified: int
    expected_errors: int
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
    end_free_zones: int
    commits: int
    buffer_pool_size: int
    buffer_pool_peak_in_use: int
    waf: float
    stream_purity: float
    class_purity: float
    interleaving_violations: int
    relocated_bytes: int
    conventional_bytes_written: int
    per_stream_appended_bytes: dict
    per_tenant_bytes: dict
    crash_checks: list = field(default_factory=list)

    def to_json(self):
        doc = asdict(self)
        doc["per_stream_appended_bytes"] = {str(k): v for k, v in self.per_stream_appended_bytes.items()}
        doc["per_tenant_bytes"] = {str(k): v for k, v in self.per_tenant_bytes.items()}
        return doc

    @property
    def accounting_holds(self):
        return self.physical_bytes_appended == (self.logical_bytes_flushed + self.padding_bytes
                                                + self.gc_bytes_moved + self.lost_bytes)


@dataclass
class _Session:
    tenant: int
    prefix: str
    fds: dict = field(default_factory=dict)  # trace fd -> facade fd


class Harness:
    """A mounted facade plus its oracle, driven one trace op at a time."""

    def __init__(self, testbed: Testbed, workdir=None):
        self.testbed = testbed
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.mkdtemp(prefix="valet-")
            workdir = self._tmp
        self.workdir = Path(workdir)
        self.meta_dir = self.workdir / "meta"
        self.device = ZonedDevice(testbed.device)
        self.vfs = testbed.mount(self.device, self.meta_dir)
        self.oracle = ShadowFS(self.vfs.route_for)
        self.tracker = ZoneClassTracker()
        if self.vfs.mapper is not None:
            self.vfs.mapper.observers.append(self.tracker)
            self.vfs.mapper.commit_hook = self._on_commit
        self.ops = 0
        self.reads_verified = 0
        self.expected_errors = 0
        self.crash_checks: list[CrashCheck] = []
        self._armed: list[tuple[int, str]] = []
        self._forks: list = []
        self._rng = random.Random(testbed.seed)
        self._oracle_lock = threading.Lock()

    # ops

    def _expected_error(self, s: _Session, op: TraceOp, path):
        o = self.oracle
        if op.op == "open":
            flags = OpenFlag.parse((op.flags or "r").replace("m", ""))
            if path not in o.names and OpenFlag.CREATE not in flags:
                return NotFound
        elif op.op in ("unlink", "rename"):
            if path not in o.names:
                return NotFound
        elif op.op == "write" and op.offset is not None:
            f = o.file((s.tenant, op.fd))
            if f.backend == MAPPER and op.offset != f.size:
                return NonAppendWrite
        elif op.op == "truncate":
            f = o.file((s.tenant, op.fd))
            if f.backend == MAPPER and op.size > f.size:
                return TruncateUp
        return None

    def apply(self, s: _Session, op: TraceOp):
        path = s.prefix + op.path if op.path is not None else None
        expected = self._expected_error(s, op, path)
        try:
            self._call(s, op, path)
        except ValetError as exc:
            if expected is not None and isinstance(exc, expected):
                self.expected_errors += 1
                self.ops += 1
                return
            raise
        if expected is not None:
            raise VerificationFailure(f"op {op.seq} ({op.op} {path}) should have raised {expected.__name__}")
        self.ops += 1

    def _call(self, s: _Session, op: TraceOp, path):
        vfs, o = self.vfs, self.oracle
        key = (s.tenant, op.fd)
        kind = op.op
        if kind == "open":
            text = op.flags or "r"
            mm = "m" in text
            flags = OpenFlag.parse(text.replace("m", ""))
            if mm:
                fd = vfs.f_mmap_open(path, writable=flags.writable, flags=flags)
            else:
                fd = vfs.f_open(path, flags)
            s.fds[op.fd] = fd
            with self._oracle_lock:
                o.open(key, path, flags, mmap_writable=mm and flags.writable)
            if vfs.backend_of(fd) == MAPPER:
                self.tracker.register(vfs.uuid_of(fd), s.tenant, op.path)
        elif kind == "write":
            data = payload(op.data_seed, op.size)
            fd = s.fds[op.fd]
            if op.offset is None:
                vfs.f_write(fd, data)
            else:
                vfs.f_pwrite(fd, data, op.offset)
            with self._oracle_lock:
                o.write(key, op.size, op.data_seed, op.offset)
        elif kind == "read":
            got = vfs.f_read(s.fds[op.fd], op.offset, op.size)
            with self._oracle_lock:
                want = o.read(key, op.offset, op.size)
            if got != want:
                raise VerificationFailure(f"op {op.seq}: read of {o.file(key).path} at {op.offset} "
                                          f"differs from the oracle")
            self.reads_verified += 1
        elif kind == "fsync":
            vfs.f_fsync(s.fds[op.fd])
            with self._oracle_lock:
                o.fsync(key)
        elif kind == "close":
            vfs.f_close(s.fds.pop(op.fd))
            with self._oracle_lock:
                o.close(key)
        elif kind == "truncate":
            vfs.f_ftruncate(s.fds[op.fd], op.size)
            with self._oracle_lock:
                o.truncate(key, op.size)
        elif kind == "unlink":
            vfs.f_unlink(path)
            with self._oracle_lock:
                o.unlink(path)
        elif kind == "rename":
            dest = s.prefix + op.dest
            vfs.f_rename(path, dest)
            with self._oracle_lock:
                o.rename(path, dest)
        else:
            raise ValueError(f"unknown trace op {kind!r}")
        self._settle_forks()

    # crash checks

    def arm(self, seq, kind):
        """Crash inside the next metadata commit (at ``kind``) issued from now on."""
        self._armed.append((seq, kind))

    def _on_commit(self, doc):
        if not self._armed:
            return
        armed, self._armed = self._armed, []
        before = self.oracle.durable_state()
        for seq, kind in armed:
            device = self.device.clone()
            meta = Path(tempfile.mkdtemp(prefix="valet-crash-"))
            shutil.copytree(self.meta_dir, meta, dirs_exist_ok=True)
            store = MetadataStore(meta, durable=False)
            torn = 0
            if kind == "torn_slot":
                torn = self._rng.randrange(1, len(encode(doc)))
            elif kind == "torn_pointer":
                torn = self._rng.randrange(2)
            try:
                store.commit(doc, crash=CrashPoint(kind, torn))
            except SimulatedCrash:
                pass
            self._forks.append((seq, kind, device, meta, before))

    def _settle_forks(self):
        # Called once the op that issued the commit is reflected in the oracle.
        forks, self._forks = self._forks, []
        for seq, kind, device, meta, before in forks:
            expected = self.oracle.durable_state() if kind == "after_swap" else before
            self._verify_recovery(seq, kind, device, meta, expected)

    def crash_here(self, seq):
        """Fork a power cut between ops and verify recovery."""
        device = self.device.clone()
        meta = Path(tempfile.mkdtemp(prefix="valet-crash-"))
        if self.meta_dir.exists():
            shutil.copytree(self.meta_dir, meta, dirs_exist_ok=True)
        self._verify_recovery(seq, BETWEEN, device, meta, self.oracle.durable_state())

    def flush_armed(self, seq):
        """Armed commit crashes that never met a commit degrade to a cut here."""
        if self._armed:
            armed, self._armed = self._armed, []
            for s, _ in armed:
                self.crash_here(s)

    def _verify_recovery(self, seq, kind, device, meta, expected):
        exp_mapper, exp_conv = expected
        vfs = None
        try:
            vfs = self.testbed.mount(device, meta)
            problems = []
            if vfs.mapper is not None:
                got = set(vfs.mapper.path_map)
                if got != set(exp_mapper):
                    problems.append(f"mapper files {sorted(got ^ set(exp_mapper))[:5]} disagree")
                stats = vfs.mapper.stats()
                lhs = stats.physical_bytes_appended
                rhs = (stats.logical_bytes_flushed + stats.padding_bytes + stats.gc_bytes_moved
                       + stats.lost_bytes)
                if lhs != rhs:
                    problems.append(f"accounting identity broken after mount: {lhs} != {rhs}")
            else:
                exp_conv = {**exp_conv, **exp_mapper}
            got = set(vfs.conventional.listdir())
            if got != set(exp_conv):
                problems.append(f"conventional files {sorted(got ^ set(exp_conv))[:5]} disagree")
            for path, snap in {**exp_conv, **exp_mapper}.items():
                if problems:
                    break
                if vfs.locate(path) is None:
                    continue
                fd = vfs.f_open(path, OpenFlag.READ)
                try:
                    size = vfs.size(fd)
                    if size != snap.size:
                        problems.append(f"{path}: size {size} != durable {snap.size}")
                        continue
                    for off in range(0, size, _VERIFY_CHUNK):
                        n = min(_VERIFY_CHUNK, size - off)
                        if vfs.f_read(fd, off, n) != snap.read(off, n):
                            problems.append(f"{path}: bytes at {off} differ from the durable state")
                            break
                finally:
                    vfs.f_close(fd)
            check = CrashCheck(seq, kind, len(exp_mapper) + len(exp_conv), not problems, "; ".join(problems))
        except ValetError as exc:
            check = CrashCheck(seq, kind, 0, False, f"{type(exc).__name__}: {exc}")
        finally:
            if vfs is not None and vfs.mapper is not None:
                vfs.mapper.pool.close()
            shutil.rmtree(meta, ignore_errors=True)
        self.crash_checks.append(check)
        if not check.ok:
            raise VerificationFailure(f"recovery after crash at op {seq} ({kind}): {check.detail}")

    # results

    def metrics(self) -> ReplayMetrics:
        tb = self.testbed
        conv = self.device.counters.conventional_bytes_written
        if self.vfs.mapper is None:
            return ReplayMetrics(
                tb.policy, self.ops, self.reads_verified, self.expected_errors,
                0, 0, 0, 0, 0, 0, 0, 0, 0, self.device.config.zone_count,
                self.device.config.zone_count, 0, 0, 0, 1.0, 1.0, 1.0, 0, 0, conv, {}, {},
                [asdict(c) for c in self.crash_checks],
            )
        st = self.vfs.mapper.stats()
        free = sum(1 for z in self.device.zone_report() if z.write_pointer == 0)
        purity = st.stream_purity
        return ReplayMetrics(
            policy=tb.policy,
            ops=self.ops,
            reads_verified=self.reads_verified,
            expected_errors=self.expected_errors,
            logical_bytes_written=st.logical_bytes_written,
            logical_bytes_flushed=st.logical_bytes_flushed,
            physical_bytes_appended=st.physical_bytes_appended,
            padding_bytes=st.padding_bytes,
            gc_calls=st.gc_calls,
            gc_bytes_moved=st.gc_bytes_moved,
            gc_zones_reclaimed=st.gc_zones_reclaimed,
            zones_reset_without_move=st.zones_reset_without_move,
            lost_bytes=st.lost_bytes,
            free_zones=st.free_zones,
            end_free_zones=free,
            commits=st.commits,
            buffer_pool_size=st.buffer_pool_size,
            buffer_pool_peak_in_use=st.buffer_pool_peak_in_use,
            waf=st.waf,
            stream_purity=sum(purity.values()) / len(purity) if purity else 1.0,
            class_purity=self.tracker.class_purity(),
            interleaving_violations=self.tracker.violations,
            relocated_bytes=self.tracker.relocated_bytes,
            conventional_bytes_written=conv,
            per_stream_appended_bytes=st.per_stream_appended_bytes,
            per_tenant_bytes=dict(sorted(self.tracker.tenant_bytes.items())),
            crash_checks=[asdict(c) for c in self.crash_checks],
        )

    def close(self, unmount=True):
        if unmount:
            self.vfs.unmount()
            with self._oracle_lock:
                self.oracle.unmount()
        elif self.vfs.mapper is not None:
            self.vfs.mapper.pool.close()
        if self._tmp is not None:
            shutil.rmtree(self._tmp, ignore_errors=True)
        else:
            self.device.save(self.workdir / DEVICE_IMAGE)


def replay(trace, testbed: Testbed | None = None, crash_at=None, workdir=None) -> ReplayMetrics:
    """Replay ``trace``; with ``crash_at``, stop before that op and verify recovery."""
    h = Harness(testbed or Testbed(), workdir)
    s = _Session(0, "")
    try:
        for op in trace:
            if crash_at is not None and op.seq >= crash_at:
                h.crash_here(op.seq)
                return h.metrics()
            h.apply(s, op)
        if crash_at is not None:
            h.crash_here(crash_at)
        return h.metrics()
    finally:
        h.close(unmount=crash_at is None)


def random_crash_points(trace_len, count, seed=0, kinds=CRASH_KINDS):
    """``count`` uniformly drawn (seq, kind) pairs, sorted by seq."""
    rng = random.Random(seed)
    return sorted((rng.randrange(trace_len), rng.choice(kinds)) for _ in range(count))


def crash_sweep(trace, points, testbed: Testbed | None = None) -> list[CrashCheck]:
    """Check recovery at every ``(seq, kind)`` point in one pass over ``trace``.

    ``between`` points cut power just before op ``seq``; the other kinds
    crash inside the first metadata commit issued at or after op ``seq``.
    """
    h = Harness(testbed or Testbed())
    s = _Session(0, "")
    pending = sorted(points)
    i = 0
    try:
        for op in trace:
            while i < len(pending) and pending[i][0] <= op.seq:
                seq, kind = pending[i]
                if kind == BETWEEN:
                    h.crash_here(seq)
                else:
                    h.arm(seq, kind)
                i += 1
            h.apply(s, op)
        for seq, kind in pending[i:]:
            h.crash_here(seq)
        h.flush_armed(len(trace))
        return list(h.crash_checks)
    finally:
        h.close(unmount=False)


def replay_multi(traces, testbed: Testbed | None = None, concurrent=False) -> ReplayMetrics:
    """Replay several tenants' traces on one device.

    Tenant ``i`` sees its paths under ``t{i}/`` (a lone trace keeps its
    paths). Round-robin interleaving is deterministic; ``concurrent=True``
    runs one thread per tenant instead.
    """
    h = Harness(testbed or Testbed())
    sessions = [_Session(i, f"t{i}/" if len(traces) > 1 else "") for i in range(len(traces))]
    try:
        if concurrent:
            errors = []

            def run(s, trace):
                try:
                    for op in trace:
                        h.apply(s, op)
                except Exception as exc:  # surfaced below
                    errors.append(exc)

            threads = [threading.Thread(target=run, args=(s, t)) for s, t in zip(sessions, traces)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if errors:
                raise errors[0]
        else:
            longest = max((len(t) for t in traces), default=0)
            for i in range(longest):
                for s, trace in zip(sessions, traces):
                    if i < len(trace):
                        h.apply(s, trace[i])
        return h.metrics()
    finally:
        h.close()
