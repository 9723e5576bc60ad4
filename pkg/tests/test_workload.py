import random
from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from valet.errors import InvalidParams, NoFreeZones, VerificationFailure
from valet.mapper import Mapper
from valet.placement import builtin_rules, load_rules
from valet.workload import (
    CacheTraceParams,
    LsmTraceParams,
    Testbed,
    TraceOp,
    WtTraceParams,
    crash_sweep,
    gen_cache_trace,
    gen_lsm_trace,
    gen_wt_trace,
    payload,
    random_crash_points,
    read_trace,
    replay,
    replay_multi,
    write_trace,
)
from valet.workload.oracle import ShadowFile, render
from valet.workload.replay import CRASH_KINDS, Harness, _Session, parse_geometry
from valet.workload.trace import census

KiB, MiB = 1024, 1 << 20
SMALL_LSM = LsmTraceParams(op_count=20_000)


@pytest.fixture(scope="module")
def lsm_small():
    return gen_lsm_trace(SMALL_LSM, seed=1)


def metrics_without(m, *keys):
    doc = m.to_json()
    for k in keys:
        doc.pop(k)
    return doc


# payloads and trace files

def test_payload_is_deterministic_prefix():
    assert payload(7, 100) == payload(7, 100)
    assert payload(7, 1000)[:100] == payload(7, 100)
    assert payload(7, 100) != payload(8, 100)
    assert payload(1, 0) == b""


@pytest.mark.parametrize("name", ["t.jsonl", "t.jsonl.gz"])
def test_trace_roundtrip(tmp_path, name):
    ops = gen_cache_trace(CacheTraceParams(op_count=300, prefill=50), seed=3)
    write_trace(tmp_path / name, ops)
    assert read_trace(tmp_path / name) == ops


def test_trace_fields():
    doc = TraceOp(1, "rename", path="a", dest="b").to_json()
    assert set(doc) >= {"seq", "op", "path", "fd", "size", "offset", "data_seed"}
    assert TraceOp.from_json(doc) == TraceOp(1, "rename", path="a", dest="b")


# generators

def test_generators_deterministic():
    for gen, params in ((gen_lsm_trace, LsmTraceParams(op_count=3000)),
                        (gen_cache_trace, CacheTraceParams(op_count=3000)),
                        (gen_wt_trace, WtTraceParams(op_count=3000))):
        assert gen(params, seed=5) == gen(params, seed=5)
        assert gen(params, seed=5) != gen(params, seed=6)


def test_seq_numbers_are_dense(lsm_small):
    assert [op.seq for op in lsm_small] == list(range(len(lsm_small)))


def test_lsm_default_shape():
    p = LsmTraceParams()
    assert (p.op_count, p.key_size, p.value_size) == (100_000, 20, 400)
    ops = gen_lsm_trace(LsmTraceParams(op_count=5000), seed=0)
    paths = {}
    wal_writes = []
    for op in ops:
        if op.op == "open":
            paths[op.fd] = op.path
        elif op.op == "write" and paths[op.fd].endswith(".log"):
            wal_writes.append(op.size)
    assert len(wal_writes) == 5000 and set(wal_writes) == {420}


def _compaction_reads(ops):
    paths = {}
    n = 0
    for op in ops:
        if op.op == "open":
            paths[op.fd] = op.path
        elif op.op == "read" and paths[op.fd].endswith(".sst"):
            n += 1
    return n


def test_no_compaction_when_fanin_exceeds_tables():
    base = LsmTraceParams(op_count=12_000, read_fraction=0.0)
    ops = gen_lsm_trace(base, seed=0)
    tables = sum(1 for op in ops if op.op == "open" and op.path.endswith(".sst") and "c" in op.flags)
    assert tables >= 2
    assert _compaction_reads(gen_lsm_trace(replace(base, compaction_fanin=tables + 1), seed=0)) == 0
    assert _compaction_reads(gen_lsm_trace(replace(base, compaction_fanin=2), seed=0)) > 0


def test_wal_unlinks_outnumber_sst_unlinks(lsm_small):
    kinds = Counter(op.path.rsplit(".", 1)[-1] for op in lsm_small if op.op == "unlink")
    assert kinds["log"] > kinds["sst"] > 0


def test_invalid_params():
    with pytest.raises(InvalidParams):
        gen_lsm_trace(LsmTraceParams(value_size=0))
    with pytest.raises(InvalidParams):
        gen_lsm_trace(LsmTraceParams(read_fraction=1.5))
    with pytest.raises(InvalidParams):
        gen_cache_trace(CacheTraceParams(set_fraction=2))
    with pytest.raises(InvalidParams):
        gen_cache_trace(CacheTraceParams(small_max=1 << 20))
    with pytest.raises(InvalidParams):
        gen_wt_trace(WtTraceParams(log_file_bytes=200))


def test_cache_default_and_populations():
    assert CacheTraceParams().op_count == 100_000
    ops = gen_cache_trace(CacheTraceParams(op_count=2000, prefill=200), seed=0)
    written = census(ops)["bytes_by_extension"]
    assert set(written) == {".bin"}
    dirs = {op.path.split("/")[1] for op in ops if op.op == "open"}
    assert dirs == {"small", "large"}


def test_cache_get_only_touches_no_zones_after_setup():
    ops = gen_cache_trace(CacheTraceParams(op_count=3000, prefill=300, set_fraction=0.0), seed=0)
    first_read = next(i for i, op in enumerate(ops) if op.op == "read")
    assert not any(op.op == "write" for op in ops[first_read:])
    readers = {op.fd for op in ops if op.op == "open" and op.flags == "r"}
    full = replay(ops)
    setup = replay([op for op in ops if op.fd not in readers or op.op == "unlink"])
    assert full.physical_bytes_appended == setup.physical_bytes_appended
    assert full.reads_verified > 1000


def test_cachelib_rules_give_two_streams():
    ops = gen_cache_trace(CacheTraceParams(op_count=3000, prefill=300), seed=0)
    m = replay(ops, Testbed(rules=builtin_rules("cachelib")))
    assert sorted(m.per_stream_appended_bytes) == [0, 1]


def test_wt_trace_routes_journal_to_conventional():
    ops = gen_wt_trace(WtTraceParams(op_count=3000), seed=0)
    assert any(op.op == "open" and "WiredTigerLog" in op.path and "m" in op.flags for op in ops)
    m = replay(ops)
    assert m.conventional_bytes_written > 0
    assert m.interleaving_violations == 0


# oracle

piece_ops = st.lists(st.tuples(st.sampled_from(["write", "truncate"]), st.integers(0, 3000),
                               st.integers(0, 2000), st.integers(0, 5)), max_size=30)


@given(piece_ops)
def test_shadow_file_matches_bytearray(ops):
    f = ShadowFile("x", "conventional")
    model = bytearray()
    snaps = []
    for kind, off, n, seed in ops:
        if kind == "write" and n:
            f.write(off, n, seed)
            if off > len(model):
                model.extend(bytes(off - len(model)))
            model[off:off + n] = payload(seed, n)
        elif kind == "truncate":
            f.truncate(off)
            del model[off:]
            model.extend(bytes(off - len(model)))
        snaps.append((f.snapshot(), bytes(model)))
        assert f.size == len(model)
        assert f.read(0, f.size) == model
    for snap, want in snaps:  # snapshots are unaffected by later changes
        assert snap.read(0, snap.size) == want


def test_render_partial_ranges():
    pieces = [(0, 10, 1, 0), (10, 5, None, 0), (15, 10, 2, 3)]
    whole = payload(1, 10) + bytes(5) + payload(2, 13)[3:]
    for lo in range(0, 25, 3):
        for n in range(0, 25 - lo, 4):
            assert render(pieces, 3, lo, n) == whole[lo:lo + n]


# replay

def test_replay_is_deterministic(lsm_small):
    a, b = replay(lsm_small), replay(lsm_small)
    assert a.to_json() == b.to_json()
    assert a.accounting_holds and a.reads_verified > 0


def test_valet_vs_single_contrast_small_device(lsm_small):
    tb = Testbed(device=parse_geometry("20x1MiB/10"), gc_free_zone_threshold=3)
    valet = replay(lsm_small, tb)
    single = replay(lsm_small, replace(tb, policy="single"))
    assert valet.relocated_bytes == valet.gc_bytes_moved == 0
    assert valet.end_free_zones > single.end_free_zones
    assert valet.interleaving_violations == 0 < single.interleaving_violations
    assert single.accounting_holds and valet.accounting_holds


def test_single_stream_runs_out_where_valet_fits(lsm_small):
    tb = Testbed(device=parse_geometry("19x1MiB/10"), gc_free_zone_threshold=3)
    assert replay(lsm_small, tb).gc_bytes_moved == 0
    with pytest.raises(NoFreeZones):
        replay(lsm_small, replace(tb, policy="single"))


def test_temp4_matches_valet_with_two_streams(lsm_small):
    valet = replay(lsm_small)
    temp4 = replay(lsm_small, Testbed(policy="temp4"))
    assert metrics_without(valet, "policy") == metrics_without(temp4, "policy")


def _nine_class_trace():
    rng = random.Random(0)
    ops, fd = [], 0
    for i in range(300):
        fd += 1
        cls = rng.randrange(9)
        ops.append(TraceOp(len(ops), "open", path=f"f{i}.c{cls}", fd=fd, flags="cw"))
        ops.append(TraceOp(len(ops), "write", fd=fd, size=rng.randint(1000, 60_000), data_seed=i))
        ops.append(TraceOp(len(ops), "close", fd=fd))
    return ops


def test_temp4_with_nine_streams_collapses_isolation():
    rules = load_rules("".join(f"glob *.c{i} -> {i}\n" for i in range(9)) + "default -> 0\n")
    mixed = {}
    for policy in ("valet", "temp4"):
        h = Harness(Testbed(policy=policy, rules=rules, device=parse_geometry("64x1MiB/14")))
        classes = {}
        mapper = h.vfs.mapper

        class Obs:
            def on_append(self, zone, uuid, *rest):
                classes.setdefault(zone, set()).add(mapper.files[uuid].path.rsplit(".", 1)[1])

            def on_reset(self, zone):
                classes.pop(zone, None)

        mapper.observers.append(Obs())
        s = _Session(0, "")
        for op in _nine_class_trace():
            h.apply(s, op)
        mixed[policy] = sum(1 for c in classes.values() if len(c) > 1) / len(classes)
        h.close()
    assert mixed["valet"] == 0
    assert mixed["temp4"] > 0


def test_replay_multi_single_trace_equals_replay(lsm_small):
    assert replay_multi([lsm_small]).to_json() == replay(lsm_small).to_json()


def test_replay_multi_isolation_and_accounting():
    lsm = gen_lsm_trace(LsmTraceParams(op_count=8000), seed=0)
    cache = gen_cache_trace(CacheTraceParams(op_count=4000, prefill=300), seed=0)
    tb = Testbed(device=parse_geometry("64x1MiB/14"))
    m = replay_multi([lsm, cache], tb)
    assert m.interleaving_violations == 0
    assert sorted(m.per_tenant_bytes) == [0, 1]
    assert sum(m.per_tenant_bytes.values()) == m.physical_bytes_appended - m.padding_bytes - m.gc_bytes_moved
    single = replay_multi([lsm, cache], replace(tb, policy="single"))
    assert single.interleaving_violations > 0


def test_replay_multi_concurrent():
    lsm = gen_lsm_trace(LsmTraceParams(op_count=6000), seed=0)
    cache = gen_cache_trace(CacheTraceParams(op_count=3000, prefill=200), seed=0)
    wt = gen_wt_trace(WtTraceParams(op_count=3000), seed=0)
    m = replay_multi([lsm, cache, wt], Testbed(device=parse_geometry("64x1MiB/14")), concurrent=True)
    assert m.interleaving_violations == 0 and m.accounting_holds
    assert m.ops == len(lsm) + len(cache) + len(wt)


def test_expected_errors_are_recorded_not_fatal():
    ops = [
        TraceOp(0, "open", path="x.log", fd=1, flags="r"),
        TraceOp(1, "open", path="x.log", fd=1, flags="cwa"),
        TraceOp(2, "write", fd=1, size=10, data_seed=1),
        TraceOp(3, "write", fd=1, size=10, offset=0, data_seed=2),
        TraceOp(4, "truncate", fd=1, size=100),
        TraceOp(5, "close", fd=1),
        TraceOp(6, "unlink", path="nope"),
    ]
    m = replay(ops)
    assert m.expected_errors == 4 and m.ops == 7


# crash injection

def test_crash_at_verifies_recovery(lsm_small):
    m = replay(lsm_small, crash_at=len(lsm_small) // 2)
    (check,) = m.crash_checks
    assert check["ok"] and check["files"] > 0


def test_random_crash_points():
    pts = random_crash_points(1000, 50, seed=1)
    assert pts == sorted(pts) and len(pts) == 50
    assert all(0 <= s < 1000 and k in CRASH_KINDS for s, k in pts)
    assert pts == random_crash_points(1000, 50, seed=1)


def test_sweep_every_kind(lsm_small):
    n = len(lsm_small)
    points = [(n * i // 13, kind) for i in range(12) for kind in CRASH_KINDS[i % len(CRASH_KINDS):][:1]]
    points += [(n // 3, kind) for kind in CRASH_KINDS]
    checks = crash_sweep(lsm_small, points)
    assert len(checks) == len(points) and all(c.ok for c in checks)
    assert {c.kind for c in checks} == set(CRASH_KINDS)


def test_harness_catches_corrupted_reads(monkeypatch, lsm_small):
    real = Mapper.read

    def flipped(self, uuid, offset, length):
        data = bytearray(real(self, uuid, offset, length))
        if data:
            data[0] ^= 1
        return bytes(data)

    monkeypatch.setattr(Mapper, "read", flipped)
    with pytest.raises(VerificationFailure):
        replay(lsm_small)


def test_harness_catches_lost_commit_data(monkeypatch, lsm_small):
    real = Mapper._snapshot

    def forgetful(self):
        doc = real(self)
        for f in doc["files"].values():  # drop each file's newest extent
            if f["extents"]:
                last = f["extents"].pop()
                f["size"] -= last["used"]
        return doc

    monkeypatch.setattr(Mapper, "_snapshot", forgetful)
    with pytest.raises(VerificationFailure):
        crash_sweep(lsm_small, random_crash_points(len(lsm_small), 10, seed=0))


def test_harness_catches_reset_before_commit(monkeypatch, lsm_small):
    """Resetting zones before the commit that drops their extents is unsafe."""
    real = Mapper.commit_metadata

    def eager(self):
        for zone in sorted(self.pending_resets):
            self._reset_zone(zone, moved=False)
        self.pending_resets.clear()
        real(self)

    monkeypatch.setattr(Mapper, "commit_metadata", eager)
    points = [(op.seq, "before_slot") for op in lsm_small if op.op == "unlink" and op.path.endswith(".log")]
    with pytest.raises(VerificationFailure):
        crash_sweep(lsm_small, points)
