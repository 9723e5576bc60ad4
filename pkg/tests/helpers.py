"""Shared fixtures-as-functions for the test suite."""

import random

from valet.placement import FileMeta, OpenFlag

WAL, SST = 0, 1


def two_cluster_metas(n, seed=0):
    """Labelled opens: WAL-like appends with small writes vs SST-like bulk creates."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        if rng.random() < 0.5:
            meta = FileMeta(f"db/{i:06d}.log", OpenFlag.parse(rng.choice(["wa", "cwa"])),
                            rng.randint(256, 8192))
            out.append((meta, WAL))
        else:
            meta = FileMeta(f"db/{i:06d}.sst", OpenFlag.parse("cw"), rng.randint(1 << 20, 4 << 20))
            out.append((meta, SST))
    return out


def purity(labels, assigned):
    """Fraction of items whose label is the majority label of their assigned cluster."""
    by = {}
    for lab, a in zip(labels, assigned):
        by.setdefault(a, []).append(lab)
    return sum(max(ls.count(x) for x in set(ls)) for ls in by.values()) / len(labels)
