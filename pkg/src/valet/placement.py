"""Hint generation: streams (affinity) and lifetime-groups (temporal cohorts).

Streams come either from an ordered rule list or from an online mini-batch
k-means model over file-open features. Lifetime groups rotate per stream
after a fixed quantum of bytes (or logical ticks). Resolvers translate the
internal hint into what a particular interface can express.
"""

from __future__ import annotations

import enum
import fnmatch
import math
import posixpath
import re
import threading
import zlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import EmptyBatch, MissingDefault, ParseError, Uninitialized


class OpenFlag(enum.Flag):
    READ = enum.auto()
    WRITE = enum.auto()
    APPEND = enum.auto()
    CREATE = enum.auto()
    TRUNCATE = enum.auto()

    @classmethod
    def parse(cls, text):
        """``"rwa"``-style or comma-separated names (``"read,write"``)."""
        letters = {"r": cls.READ, "w": cls.WRITE, "a": cls.APPEND, "c": cls.CREATE, "t": cls.TRUNCATE}
        flags = cls(0)
        if not text:
            return flags
        if "," in text or text.upper() in cls.__members__:
            for name in text.split(","):
                flags |= cls[name.strip().upper()]
            return flags
        for ch in text:
            flags |= letters[ch]
        return flags

    def letters(self):
        out = ""
        for ch, flag in (("r", OpenFlag.READ), ("w", OpenFlag.WRITE), ("a", OpenFlag.APPEND),
                         ("c", OpenFlag.CREATE), ("t", OpenFlag.TRUNCATE)):
            if flag in self:
                out += ch
        return out

    @property
    def writable(self):
        return bool(self & (OpenFlag.WRITE | OpenFlag.APPEND | OpenFlag.CREATE | OpenFlag.TRUNCATE))


class KernelHint(enum.IntEnum):
    HOT = 0
    WARM = 1
    COLD = 2
    UNDEFINED = 3


@dataclass(frozen=True)
class FileMeta:
    path: str
    open_flags: OpenFlag = OpenFlag.READ
    observed_write_size_hint: int | None = None

    def __post_init__(self):
        if not self.path:
            raise ValueError("path must be non-empty")

    @property
    def extension(self):
        return posixpath.splitext(self.path)[1].lower()

    @property
    def dir_depth(self):
        return self.path.strip("/").count("/")


@dataclass(frozen=True, order=True)
class Hint:
    stream: int
    group: int = 0


@dataclass(frozen=True)
class MapperDirective:
    stream: int
    group: int


# rules

_FLAG_NAMES = {"APPEND": OpenFlag.APPEND, "TRUNC": OpenFlag.TRUNCATE, "CREATE": OpenFlag.CREATE}
_RULE_RE = re.compile(r"^(?:(glob|flag)\s+(\S+)\s+|(default)\s+)->\s*(\d+)$")


@dataclass(frozen=True)
class Rule:
    kind: str  # "glob" | "flag"
    arg: str
    stream: int

    def matches(self, meta: FileMeta):
        if self.kind == "glob":
            return fnmatch.fnmatchcase(meta.path, self.arg)
        return _FLAG_NAMES[self.arg] in meta.open_flags


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    default_stream: int

    def stream_for(self, meta: FileMeta) -> int:
        for rule in self.rules:
            if rule.matches(meta):
                return rule.stream
        return self.default_stream

    @property
    def streams(self):
        return sorted({r.stream for r in self.rules} | {self.default_stream})


def load_rules(config_text: str) -> RuleSet:
    rules = []
    default = None
    for lineno, raw in enumerate(config_text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _RULE_RE.match(line)
        if not m:
            raise ParseError(lineno, f"cannot parse {raw.strip()!r}")
        kind, arg, is_default, stream = m.groups()
        if is_default:
            if default is not None:
                raise ParseError(lineno, "duplicate default")
            default = int(stream)
            continue
        if kind == "flag" and arg not in _FLAG_NAMES:
            raise ParseError(lineno, f"unknown flag {arg!r}")
        rules.append(Rule(kind, arg, int(stream)))
    if default is None:
        raise MissingDefault("rule file has no 'default -> <stream>' line")
    return RuleSet(tuple(rules), default)


def builtin_rules(name: str) -> RuleSet:
    """Bundled rule files: ``rocksdb``, ``cachelib``, ``wiredtiger``, ``valet``."""
    text = resources.files("valet.rules").joinpath(f"{name}.rules").read_text()
    return load_rules(text)


# lifetime groups

@dataclass
class StreamState:
    group: int = 0
    bytes_since_rotation: int = 0
    tick_of_rotation: int = 0
    bytes_written: int = 0


@dataclass
class LogicalClock:
    now: int = 0

    def tick(self, n=1):
        self.now += n
        return self.now


@dataclass(frozen=True)
class GroupPolicy:
    """Rotate after ``quantum`` bytes written to the stream, or ticks if ``unit="time"``."""

    quantum: int
    unit: str = "bytes"


def assign_lifetime_group(state: StreamState, clock: LogicalClock, policy: GroupPolicy) -> int:
    if policy.unit == "time":
        if clock.now - state.tick_of_rotation >= policy.quantum:
            state.group += 1
            state.tick_of_rotation = clock.now
    elif state.bytes_since_rotation >= policy.quantum:
        state.group += 1
        state.bytes_since_rotation = 0
    return state.group


# learned streams

FEATURE_DIM = 5
_EXT_BUCKETS = 16
_DEPTH_CAP = 8
_LOG2_LO, _LOG2_HI = 9.0, 24.0  # 512 B .. 16 MiB
DEFAULT_SIZE_HINT = 4096


def kmeans_featurize(meta: FileMeta) -> np.ndarray:
    ext = zlib.crc32(meta.extension.encode()) % _EXT_BUCKETS / (_EXT_BUCKETS - 1)
    write = 1.0 if meta.open_flags & (OpenFlag.WRITE | OpenFlag.CREATE) else 0.0
    append = 1.0 if OpenFlag.APPEND in meta.open_flags else 0.0
    depth = min(meta.dir_depth, _DEPTH_CAP) / _DEPTH_CAP
    size = meta.observed_write_size_hint or DEFAULT_SIZE_HINT
    lg = (math.log2(max(size, 1)) - _LOG2_LO) / (_LOG2_HI - _LOG2_LO)
    lg = min(max(lg, 0.0), 1.0)
    return np.array([ext, write, append, depth, lg], dtype=np.float64)


@dataclass
class KMeansModel:
    k: int
    batch_size: int = 8
    rng_seed: int = 0
    # Points farther than this from every active centroid claim a dormant one.
    spawn_radius: float | None = None
    centroids: np.ndarray | None = None
    counts: np.ndarray | None = None
    active: np.ndarray | None = None
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        self._rng = np.random.default_rng(self.rng_seed)

    @property
    def initialized(self):
        return self.centroids is not None

    def _seed(self, X):
        # k-means++ over the first batch. Once every point coincides with a
        # chosen center, the remaining centroids stay dormant (copies of
        # center 0) until a distant point arrives.
        rng = self._rng
        centers = [X[rng.integers(len(X))]]
        d2 = ((X - centers[0]) ** 2).sum(axis=1)
        for _ in range(1, self.k):
            total = d2.sum()
            if total <= 0:
                break
            idx = rng.choice(len(X), p=d2 / total)
            centers.append(X[idx])
            d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
        self.active = np.zeros(self.k, dtype=bool)
        self.active[:len(centers)] = True
        centers += [centers[0]] * (self.k - len(centers))
        self.centroids = np.array(centers, dtype=np.float64)
        self.counts = np.zeros(self.k, dtype=np.int64)

    def _distances(self, X):
        d = ((X[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        d[:, ~self.active] = np.inf
        return d

    def _nearest(self, X):
        return np.argmin(self._distances(X), axis=1)  # first minimum: lowest index wins ties

    def is_novel(self, x):
        if self.spawn_radius is None or not self.initialized or self.active.all():
            return False
        d = self._distances(np.asarray(x, dtype=np.float64).reshape(1, -1))
        return bool(d.min() > self.spawn_radius ** 2)

    def _spawn(self, x):
        c = int(np.argmin(self.active))  # lowest dormant slot
        self.active[c] = True
        self.centroids[c] = x
        self.counts[c] = 1


def kmeans_partial_fit(model: KMeansModel, batch) -> KMeansModel:
    X = np.asarray(batch, dtype=np.float64)
    if X.size == 0:
        raise EmptyBatch("partial_fit needs at least one point")
    X = X.reshape(len(X), -1)
    if not model.initialized:
        model._seed(X)
    for x in X:
        if model.is_novel(x):
            model._spawn(x)
            continue
        c = int(model._nearest(x.reshape(1, -1))[0])
        model.counts[c] += 1
        lr = 1.0 / model.counts[c]
        model.centroids[c] = (1.0 - lr) * model.centroids[c] + lr * x
    return model


def kmeans_predict(model: KMeansModel, x) -> int:
    if not model.initialized:
        raise Uninitialized("model has not seen a batch yet")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return int(model._nearest(x)[0])


# generators

@dataclass
class Heuristic:
    rules: RuleSet

    def stream_for(self, meta: FileMeta) -> int:
        return self.rules.stream_for(meta)


@dataclass
class Learned:
    """Online stream prediction; opens are batched into partial fits.

    The very first open seeds the model on its own, so there is no cold-start
    stream. A file unlike anything seen so far is fitted at once so that it
    can open a new stream instead of joining the nearest existing one.
    """

    model: KMeansModel
    pending: list = field(default_factory=list)

    def stream_for(self, meta: FileMeta) -> int:
        x = kmeans_featurize(meta)
        if not self.model.initialized or self.model.is_novel(x):
            kmeans_partial_fit(self.model, [x])
            return kmeans_predict(self.model, x)
        self.pending.append(x)
        if len(self.pending) >= self.model.batch_size:
            kmeans_partial_fit(self.model, self.pending)
            self.pending = []
        return kmeans_predict(self.model, x)


# resolvers

def resolve_multistream(hint: Hint, active_stream_count: int) -> KernelHint:
    if active_stream_count < 1:
        raise ValueError("active_stream_count must be >= 1")
    # Streams are small consecutive ids, so mod 4 is injective up to 4 streams
    # and spreads larger counts evenly; the group dimension is dropped.
    return KernelHint(hint.stream % len(KernelHint))


def resolve_zones(hint: Hint) -> MapperDirective:
    return MapperDirective(hint.stream, hint.group)


class PlacementEngine:
    """Stateful hint source shared by the facade and the mapper."""

    def __init__(self, generator, group_policy: GroupPolicy, stream_map=None):
        self.generator = generator
        self.group_policy = group_policy
        self.clock = LogicalClock()
        self.streams: dict[int, StreamState] = {}
        # Optional post-mapping of streams (used by the 4-level baseline).
        self.stream_map = stream_map
        self._lock = threading.Lock()

    def _state(self, stream) -> StreamState:
        return self.streams.setdefault(stream, StreamState())

    def get_hint(self, meta: FileMeta) -> Hint:
        with self._lock:
            stream = self.generator.stream_for(meta)
            if self.stream_map is not None:
                stream = self.stream_map(stream)
            group = assign_lifetime_group(self._state(stream), self.clock, self.group_policy)
            return Hint(stream, group)

    def record_write(self, stream, nbytes) -> int:
        """Account ``nbytes`` flushed to ``stream``; returns the group for them."""
        with self._lock:
            state = self._state(stream)
            group = assign_lifetime_group(state, self.clock, self.group_policy)
            state.bytes_since_rotation += nbytes
            state.bytes_written += nbytes
            return group

    def tick(self):
        self.clock.tick()

    def export_state(self):
        return {
            "clock": self.clock.now,
            "streams": {
                str(s): [st.group, st.bytes_since_rotation, st.tick_of_rotation, st.bytes_written]
                for s, st in self.streams.items()
            },
        }

    def import_state(self, doc):
        self.clock.now = doc.get("clock", 0)
        for s, (group, since, tick, total) in doc.get("streams", {}).items():
            self.streams[int(s)] = StreamState(group, since, tick, total)
