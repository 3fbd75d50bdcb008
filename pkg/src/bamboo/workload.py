"""Workload generators: hotspot synthetic, Zipfian YCSB-style, and mixtures.

Every generator yields :class:`bamboo.planner.Instance` objects.  Keys within
one instance are distinct, so no later access aliases an earlier write and
every write may retire (the planner reaches the same verdict for distinct
key slots).  The harness applies the delta cutoff on top.

Workload file (JSON), one of::

    {"kind": "synthetic", "K": 16, "hotspots": [0.0], "filler_read_ratio": 1.0}
    {"kind": "ycsb", "K": 16, "theta": 0.9, "read_ratio": 0.5}
    {"kind": "mixture", "components": [
        {"weight": 0.95, "spec": {"kind": "ycsb", "K": 16, "theta": 0.9}},
        {"weight": 0.05, "spec": {"kind": "ycsb", "K": 1000, "read_ratio": 1.0}}]}

Table size comes from the run config unless the file sets ``rows``.
"""

from __future__ import annotations

import bisect
import json
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .locking import EX, SH
from .planner import Instance

MAIN = "main"


def worker_rng(seed, worker_id) -> random.Random:
    """Independent deterministic sub-stream for one worker."""
    return random.Random(f"{seed}:{worker_id}")


# -- synthetic hotspot workload ---------------------------------------------


def hotspot_ordinal(pos: float, K: int) -> int:
    return math.floor(pos * (K - 1))


@dataclass
class SyntheticSpec:
    K: int = 16
    hotspots: list = field(default_factory=lambda: [0.0])
    hotspot_keys: list | None = None
    rows: int = 100_000
    filler_read_ratio: float = 1.0
    user_abort: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        for p in self.hotspots:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"hotspot position {p} outside [0, 1]")
        if self.hotspot_keys is None:
            self.hotspot_keys = list(range(len(self.hotspots)))
        if len(self.hotspot_keys) != len(self.hotspots):
            raise ConfigError("one key per hotspot required")
        if len(set(self.hotspot_keys)) != len(self.hotspot_keys):
            raise ConfigError(f"hotspot keys repeat: {self.hotspot_keys}")
        ords = self.ordinals()
        if len(set(ords)) != len(ords):
            raise ConfigError(f"hotspot positions {self.hotspots} collide at ordinals {ords} for K={self.K}")
        if self.rows < self.K:
            raise ConfigError(f"rows={self.rows} too small for K={self.K} distinct keys")
        if not 0.0 <= self.filler_read_ratio <= 1.0:
            raise ConfigError("filler_read_ratio outside [0, 1]")

    def ordinals(self) -> list:
        return [hotspot_ordinal(p, self.K) for p in self.hotspots]


def synthetic_instance(spec: SyntheticSpec, rng: random.Random) -> Instance:
    hot = dict(zip(spec.ordinals(), spec.hotspot_keys))
    taken = set(spec.hotspot_keys)
    accs = []
    for i in range(spec.K):
        if i in hot:
            accs.append((MAIN, hot[i], EX))
            continue
        k = rng.randrange(spec.rows)
        while k in taken:
            k = rng.randrange(spec.rows)
        taken.add(k)
        accs.append((MAIN, k, SH if rng.random() < spec.filler_read_ratio else EX))
    ua = spec.user_abort > 0 and rng.random() < spec.user_abort
    return Instance(accs, [m is EX for _, _, m in accs], ua, "synthetic")


def gen_synthetic(spec: SyntheticSpec, seed, count: int):
    rng = random.Random(seed)
    for _ in range(count):
        yield synthetic_instance(spec, rng)


# -- Zipfian -----------------------------------------------------------------


@dataclass
class ZipfSpec:
    N: int = 1024
    theta: float = 0.9
    read_ratio: float = 0.5
    K: int = 16
    perm_seed: int = 0
    user_abort: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.theta < 0:
            raise ConfigError(f"theta must be >= 0, got {self.theta}")
        if not 0.0 <= self.read_ratio <= 1.0:
            raise ConfigError("read_ratio outside [0, 1]")
        if not 1 <= self.K <= self.N:
            raise ConfigError(f"K={self.K} needs 1 <= K <= N={self.N}")


class ZipfSampler:
    """Rank i in 1..N drawn with probability proportional to i**-theta, then
    mapped to a key through a fixed seeded permutation."""

    def __init__(self, spec: ZipfSpec):
        self.spec = spec
        w = np.arange(1, spec.N + 1, dtype=float) ** -spec.theta
        cdf = np.cumsum(w)
        self.cdf = cdf / cdf[-1]
        self._cdf_list = self.cdf.tolist()
        perm = list(range(spec.N))
        random.Random(spec.perm_seed).shuffle(perm)
        self.perm = np.array(perm)
        self._perm_list = perm

    def pmf(self) -> np.ndarray:
        return np.diff(self.cdf, prepend=0.0)

    def rank(self, rng: random.Random) -> int:
        """0-based rank."""
        return min(bisect.bisect_right(self._cdf_list, rng.random()), self.spec.N - 1)

    def sample(self, rng: random.Random) -> int:
        return self._perm_list[self.rank(rng)]

    def ranks_many(self, gen: np.random.Generator, n: int) -> np.ndarray:
        r = np.searchsorted(self.cdf, gen.random(n), side="right")
        return np.minimum(r, self.spec.N - 1)

    def sample_many(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return self.perm[self.ranks_many(gen, n)]


def zipf_sample(spec: ZipfSpec, rng: random.Random, _cache={}) -> int:
    key = (spec.N, spec.theta, spec.perm_seed)
    s = _cache.get(key)
    if s is None:
        s = _cache[key] = ZipfSampler(spec)
    return s.sample(rng)


def ycsb_instance(spec: ZipfSpec, sampler: ZipfSampler, rng: random.Random) -> Instance:
    seen, accs = set(), []
    for _ in range(spec.K):
        k = sampler.sample(rng)
        while k in seen:  # resample duplicates
            k = sampler.sample(rng)
        seen.add(k)
        accs.append((MAIN, k, SH if rng.random() < spec.read_ratio else EX))
    ua = spec.user_abort > 0 and rng.random() < spec.user_abort
    return Instance(accs, [m is EX for _, _, m in accs], ua, "ycsb")


def gen_ycsb(spec: ZipfSpec, seed, count: int):
    rng = random.Random(seed)
    sampler = ZipfSampler(spec)
    for _ in range(count):
        yield ycsb_instance(spec, sampler, rng)


# -- mixtures and the common generator interface -----------------------------


@dataclass
class MixtureSpec:
    components: list  # [(weight, spec)]

    def __post_init__(self):
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        if any(w < 0 for w, _ in self.components) or sum(w for w, _ in self.components) <= 0:
            raise ConfigError("mixture weights must be non-negative with a positive sum")


class Generator:
    """Per-worker instance stream for any workload spec."""

    def __init__(self, spec, rng: random.Random):
        self.rng = rng
        if isinstance(spec, MixtureSpec):
            self.parts = [Generator(s, rng) for _, s in spec.components]
            tot = sum(w for w, _ in spec.components)
            acc, self.cum = 0.0, []
            for w, _ in spec.components:
                acc += w / tot
                self.cum.append(acc)
            self._next = self._mix
        elif isinstance(spec, ZipfSpec):
            self.spec, self.sampler = spec, ZipfSampler(spec)
            self._next = lambda: ycsb_instance(self.spec, self.sampler, self.rng)
        elif isinstance(spec, SyntheticSpec):
            self.spec = spec
            self._next = lambda: synthetic_instance(self.spec, self.rng)
        else:
            raise ConfigError(f"unknown workload spec {spec!r}")

    def _mix(self):
        i = min(bisect.bisect_right(self.cum, self.rng.random()), len(self.parts) - 1)
        return self.parts[i]._next()

    def __call__(self) -> Instance:
        return self._next()


def long_readonly_mix(base: ZipfSpec, frac: float = 0.05, long_K: int = 1000) -> MixtureSpec:
    long = ZipfSpec(base.N, base.theta, 1.0, min(long_K, base.N), base.perm_seed)
    return MixtureSpec([(1.0 - frac, base), (frac, long)])


def spec_from_dict(obj: dict, rows: int | None = None):
    obj = dict(obj)
    kind = obj.pop("kind", None)
    rows = obj.pop("rows", rows)
    try:
        if kind == "synthetic":
            if rows is not None:
                obj["rows"] = rows
            return SyntheticSpec(**obj)
        if kind == "ycsb":
            if rows is not None:
                obj["N"] = rows
            return ZipfSpec(**obj)
        if kind == "mixture":
            return MixtureSpec([(float(c["weight"]), spec_from_dict(c["spec"], rows))
                                for c in obj["components"]])
    except TypeError as e:
        raise ConfigError(f"workload {kind}: {e}") from None
    raise ConfigError(f"unknown workload kind {kind!r}")


def load_workload(path, rows: int | None = None):
    with open(path) as f:
        return spec_from_dict(json.load(f), rows)
