"""Alias merging of name candidates and appearance timelines.

Two candidates link when enough of three similarity tests pass (edit-distance
ratio, token Jaccard, character-trigram cosine). Linked candidates are merged
transitively with union-find.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence, Union

from .audit import Collector
from .entities import NameCandidate
from .errors import AdapterError

log = logging.getLogger(__name__)


class Combinator(str, enum.Enum):
    ANY = "Any"
    MAJORITY = "Majority"
    ALL = "All"

    def required(self) -> int:
        return {"Any": 1, "Majority": 2, "All": 3}[self.value]


@dataclass(frozen=True)
class SimilarityConfig:
    fuzzy_threshold: float = 0.85
    jaccard_threshold: float = 0.5
    # 0.5 sits between the trigram cosine of "donald trump"/"trump" (0.548)
    # and "mickey rourke"/"brother rourke" (0.435).
    embedding_threshold: float = 0.5
    combinator: Combinator = Combinator.MAJORITY

    def __post_init__(self) -> None:
        for name in ("fuzzy_threshold", "jaccard_threshold", "embedding_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "combinator", Combinator(self.combinator))


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def fuzzy_similarity(a: str, b: str) -> float:
    """``1 - levenshtein / max_len``; 1.0 for two empty strings."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def jaccard_similarity(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def char_trigrams(s: str) -> Counter:
    """Bag of character trigrams; strings shorter than 3 are a single gram."""
    if len(s) < 3:
        return Counter([s]) if s else Counter()
    return Counter(s[i:i + 3] for i in range(len(s) - 2))


def cosine(u: Counter, v: Counter) -> float:
    if not u and not v:
        return 1.0
    if not u or not v:
        return 0.0
    if len(u) > len(v):
        u, v = v, u
    dot = sum(c * v[g] for g, c in u.items() if g in v)
    norm2 = sum(c * c for c in u.values()) * sum(c * c for c in v.values())
    return min(1.0, max(0.0, dot / math.sqrt(norm2)))


class Embedder(Protocol):
    def similarity(self, a: str, b: str) -> float:
        ...


class TrigramEmbedder:
    """Default deterministic embedder: cosine over character-trigram counts."""

    def __init__(self) -> None:
        self._cache: dict[str, Counter] = {}

    def _vec(self, s: str) -> Counter:
        v = self._cache.get(s)
        if v is None:
            v = self._cache[s] = char_trigrams(s)
        return v

    def similarity(self, a: str, b: str) -> float:
        return cosine(self._vec(a), self._vec(b))


class CommandEmbedder:
    """External embedder: one string per stdin line, one JSON float array per stdout line."""

    def __init__(self, command: str, timeout_s: float = 120.0) -> None:
        self.argv = shlex.split(command)
        self.timeout_s = timeout_s
        self._cache: dict[str, list[float]] = {}

    def prefetch(self, strings: Sequence[str]) -> None:
        todo = sorted({s for s in strings if s not in self._cache})
        if not todo:
            return
        if any("\n" in s for s in todo):
            raise AdapterError("embedder input may not contain newlines")
        try:
            proc = subprocess.run(self.argv, input="\n".join(todo) + "\n", capture_output=True,
                                  text=True, encoding="utf-8", timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"embedder command failed: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(f"embedder exited with {proc.returncode}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != len(todo):
            raise AdapterError(f"embedder returned {len(lines)} vectors for {len(todo)} strings")
        for s, line in zip(todo, lines):
            try:
                vec = [float(x) for x in json.loads(line)]
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise AdapterError(f"bad embedding line: {exc}") from exc
            self._cache[s] = vec

    def similarity(self, a: str, b: str) -> float:
        self.prefetch([a, b])
        u, v = self._cache[a], self._cache[b]
        if len(u) != len(v):
            raise AdapterError("embedding dimensions differ")
        dot = sum(x * y for x, y in zip(u, v))
        nu, nv = math.sqrt(sum(x * x for x in u)), math.sqrt(sum(x * x for x in v))
        if nu == 0 or nv == 0:
            return 0.0
        return min(1.0, max(0.0, dot / (nu * nv)))


_DEFAULT_EMBEDDER = TrigramEmbedder()


def embedding_similarity(a: str, b: str, embedder: Optional[Embedder] = None,
                         audit: Optional[Collector] = None) -> float:
    """Cosine similarity under ``embedder`` clamped to [0, 1]; 0 if the embedder fails."""
    emb = embedder or _DEFAULT_EMBEDDER
    try:
        return emb.similarity(a, b)
    except AdapterError as exc:
        log.warning("embedder failed: %s", exc)
        if audit is not None:
            audit.warn("cluster", f"embedder failed, similarity taken as 0: {exc}")
        return 0.0


def key_scores(a: str, b: str, embedder: Optional[Embedder] = None,
               audit: Optional[Collector] = None) -> tuple[float, float, float]:
    """(fuzzy, jaccard, embedding) for two folded, title-stripped keys."""
    return (fuzzy_similarity(a, b),
            jaccard_similarity(a.split(), b.split()),
            embedding_similarity(a, b, embedder, audit))


def keys_link(a: str, b: str, cfg: SimilarityConfig, embedder: Optional[Embedder] = None,
              audit: Optional[Collector] = None) -> bool:
    if a == b:
        return True
    f, j, e = key_scores(a, b, embedder, audit)
    votes = (f >= cfg.fuzzy_threshold) + (j >= cfg.jaccard_threshold) + (e >= cfg.embedding_threshold)
    return votes >= cfg.combinator.required()


def pair_links(a: NameCandidate, b: NameCandidate, cfg: SimilarityConfig = SimilarityConfig(),
               embedder: Optional[Embedder] = None) -> bool:
    """Whether two candidates name the same person under ``cfg``."""
    return keys_link(a.core_key, b.core_key, cfg, embedder)


class UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


@dataclass(frozen=True)
class Timeline:
    intervals: tuple[tuple[float, float], ...]
    first_s: float
    last_s: float

    def to_json(self) -> dict:
        return {"first_s": self.first_s, "last_s": self.last_s,
                "intervals": [list(iv) for iv in self.intervals]}


def merge_intervals(intervals: Iterable[tuple[float, float]], gap_tolerance_s: float) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for s, e in sorted(intervals):
        if out and s - out[-1][1] <= gap_tolerance_s:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def build_timeline(
    sightings: Iterable[Union[NameCandidate, float]],
    gap_tolerance_s: float = 3.0,
    sample_rate: float = 1.0,
) -> Timeline:
    """Merge per-sighting intervals ``[t, t + 1/sample_rate)`` whose gaps are within tolerance.

    A candidate whose frame stood in for later near-duplicate frames extends
    to ``covered_until_s``.
    """
    if gap_tolerance_s < 0:
        raise ValueError("gap_tolerance_s must be non-negative")
    step = 1.0 / sample_rate
    raw = []
    for s in sightings:
        if isinstance(s, NameCandidate):
            end = s.timestamp_s + step
            if s.covered_until_s is not None:
                end = max(end, s.covered_until_s)
            raw.append((s.timestamp_s, end))
        else:
            raw.append((float(s), float(s) + step))
    if not raw:
        raise ValueError("a timeline needs at least one sighting")
    merged = merge_intervals(raw, gap_tolerance_s)
    return Timeline(tuple(merged), merged[0][0], max(e for _, e in merged))


def canonical_name(members: Iterable[NameCandidate]) -> str:
    """Most frequent title-stripped surface; ties go to the longest, then lexicographic order."""
    counts = Counter(m.core_surface for m in members if m.core)
    if not counts:
        raise ValueError("canonical_name needs a member with a non-empty name")
    return min(counts, key=lambda s: (-counts[s], -len(s), s))


@dataclass(frozen=True)
class NameCluster:
    members: tuple[NameCandidate, ...]
    canonical: str
    timeline: Timeline


def cluster_keys(keys: Sequence[str], cfg: SimilarityConfig, embedder: Optional[Embedder] = None,
                 audit: Optional[Collector] = None) -> list[list[int]]:
    """Connected components of the link graph over distinct keys."""
    if isinstance(embedder, CommandEmbedder):
        try:
            embedder.prefetch(keys)
        except AdapterError:
            pass  # reported pairwise by embedding_similarity
    uf = UnionFind(len(keys))
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if uf.find(i) != uf.find(j) and keys_link(keys[i], keys[j], cfg, embedder, audit):
                uf.union(i, j)
    return uf.groups()


def cluster_names(
    candidates: Sequence[NameCandidate],
    cfg: SimilarityConfig = SimilarityConfig(),
    embedder: Optional[Embedder] = None,
    gap_tolerance_s: float = 3.0,
    sample_rate: float = 1.0,
    audit: Optional[Collector] = None,
) -> list[NameCluster]:
    """Partition candidates into alias clusters ordered by first appearance, then canonical name.

    Candidates sharing a title-stripped key always link, so the pairwise
    tests run once per distinct key.
    """
    by_key: dict[str, list[NameCandidate]] = {}
    for c in candidates:
        by_key.setdefault(c.core_key, []).append(c)
    keys = sorted(by_key)
    clusters = []
    for group in cluster_keys(keys, cfg, embedder, audit):
        members = [m for i in group for m in by_key[keys[i]]]
        members.sort(key=lambda m: (m.timestamp_s, m.surface, m.digest()))
        clusters.append(NameCluster(tuple(members), canonical_name(members),
                                    build_timeline(members, gap_tolerance_s, sample_rate)))
    clusters.sort(key=lambda c: (c.timeline.first_s, c.canonical))
    return clusters
