import json
import math
import random

import numpy as np
import pytest
from scipy.stats import chisquare

from bamboo.errors import ConfigError
from bamboo.locking import EX, SH
from bamboo.workload import (
    Generator,
    SyntheticSpec,
    ZipfSampler,
    ZipfSpec,
    gen_synthetic,
    gen_ycsb,
    hotspot_ordinal,
    load_workload,
    long_readonly_mix,
    worker_rng,
    zipf_sample,
)


def test_single_hotspot_first():
    spec = SyntheticSpec(K=16, hotspots=[0.0], rows=1000)
    for inst in gen_synthetic(spec, 1, 50):
        assert inst.accesses[0] == ("main", 0, EX)
        assert len(inst.accesses) == 16
        fill = [k for _, k, _ in inst.accesses[1:]]
        assert 0 not in fill and len(set(fill)) == 15
        assert all(m is SH for _, _, m in inst.accesses[1:])


def test_two_hotspots_ends():
    spec = SyntheticSpec(K=16, hotspots=[0.0, 1.0], rows=1000)
    inst = next(gen_synthetic(spec, 0, 1))
    assert inst.accesses[0][1:] == (0, EX) and inst.accesses[15][1:] == (1, EX)


def test_ordinal_mapping_floor():
    assert [hotspot_ordinal(p, 16) for p in (0, 0.25, 0.5, 0.75, 1.0)] == [0, 3, 7, 11, 15]


def test_colliding_hotspots_rejected():
    with pytest.raises(ConfigError, match="collide"):
        SyntheticSpec(K=4, hotspots=[0.5, 0.6], rows=100)
    with pytest.raises(ConfigError):
        SyntheticSpec(K=4, hotspots=[1.5], rows=100)


def test_same_seed_same_stream():
    spec = SyntheticSpec(K=8, hotspots=[0.5], rows=500)
    assert list(gen_synthetic(spec, 9, 30)) == list(gen_synthetic(spec, 9, 30))
    z = ZipfSpec(N=500, theta=0.9, K=8)
    assert list(gen_ycsb(z, 9, 30)) == list(gen_ycsb(z, 9, 30))


def test_worker_streams_independent_and_reproducible():
    a = [worker_rng(1, 0).random() for _ in range(3)]
    assert a == [worker_rng(1, 0).random() for _ in range(3)]
    assert worker_rng(1, 0).random() != worker_rng(1, 1).random()


def test_zipf_uniform_limit():
    s = ZipfSampler(ZipfSpec(N=100, theta=0.0, K=1))
    keys = s.sample_many(np.random.default_rng(0), 1_000_000)
    counts = np.bincount(keys, minlength=100)
    expect = 10_000
    sigma = math.sqrt(1_000_000 * 0.01 * 0.99)
    assert np.all(np.abs(counts - expect) < 4 * sigma)
    assert chisquare(counts).pvalue > 0.01


def test_zipf_rank_ratio():
    s = ZipfSampler(ZipfSpec(N=10_000, theta=0.9, K=1))
    r = np.bincount(s.ranks_many(np.random.default_rng(3), 1_000_000))
    assert abs(r[0] / r[1] / 2 ** 0.9 - 1) < 0.05


def test_zipf_scalar_matches_distribution():
    spec = ZipfSpec(N=50, theta=0.8, K=1)
    rng = random.Random(2)
    s = ZipfSampler(spec)
    hits = np.zeros(50)
    inv = {k: i for i, k in enumerate(s.perm)}
    for _ in range(40_000):
        hits[inv[zipf_sample(spec, rng)]] += 1
    assert chisquare(hits, s.pmf() * hits.sum()).pvalue > 1e-4


def test_ycsb_read_only_and_distinct():
    for inst in gen_ycsb(ZipfSpec(N=1024, theta=0.99, read_ratio=1.0, K=16), 0, 300):
        assert all(m is SH for _, _, m in inst.accesses)
        assert len({k for _, k, _ in inst.accesses}) == 16


def test_ycsb_ex_fraction_binomial():
    n = 100_000
    ex = sum(m is EX for inst in gen_ycsb(ZipfSpec(N=1024, theta=0.5, read_ratio=0.5, K=1), 4, n)
             for _, _, m in inst.accesses)
    assert abs(ex - n / 2) < 3 * math.sqrt(n / 4)


def test_long_readonly_mixture():
    mix = long_readonly_mix(ZipfSpec(N=2000, theta=0.6, K=16), frac=0.05, long_K=1000)
    g = Generator(mix, random.Random(0))
    lens = [len(g().accesses) for _ in range(2000)]
    frac = lens.count(1000) / len(lens)
    assert set(lens) == {16, 1000}
    assert abs(frac - 0.05) < 4 * math.sqrt(0.05 * 0.95 / 2000)


def test_workload_file(tmp_path):
    p = tmp_path / "w.json"
    p.write_text(json.dumps({"kind": "synthetic", "K": 16, "hotspots": [0.0, 0.75]}))
    spec = load_workload(p, rows=5000)
    assert spec.rows == 5000 and spec.ordinals() == [0, 11]
    p.write_text(json.dumps({"kind": "nope"}))
    with pytest.raises(ConfigError):
        load_workload(p)
