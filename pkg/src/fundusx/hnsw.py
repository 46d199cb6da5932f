"""Hierarchical navigable small world index over unit-normalized vectors.

Multi-layer proximity graph for approximate nearest-neighbor search by cosine
similarity. The graph only approximates the candidate set; every reported
score is the exact cosine of the (normalized) query and the stored vector.

Determinism contract: identical insertion order, parameters, and seed yield an
identical graph, and therefore identical ranked output for any query.
"""

from __future__ import annotations

import heapq
import json
import math
import random
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .snapshot import read_snapshot, write_snapshot

SNAPSHOT_KIND = b"HNSW"
SNAPSHOT_VERSION = 1


def _unit(arr: np.ndarray) -> np.ndarray:
    """Normalize in float64; cosine is scale-invariant so this is lossless."""
    norm = float(np.linalg.norm(arr))
    if norm < 1e-12:
        raise ValueError("zero vector has no direction")
    return arr / norm


class HnswError(Exception):
    pass


class DuplicateIdError(HnswError):
    pass


class DimensionMismatchError(HnswError):
    pass


class EmptyIndexError(HnswError):
    pass


@dataclass(frozen=True)
class HnswParams:
    """Graph construction/search knobs.

    M bounds the per-node degree on layers >= 1; layer 0 allows up to 2*M.
    """

    M: int = 16
    ef_construction: int = 200
    ef_search: int = 100
    seed: int = 7

    def __post_init__(self) -> None:
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < self.M:
            raise ValueError("ef_construction must be >= M")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")


@dataclass(frozen=True)
class SearchHit:
    id: str
    score: float


class HnswIndex:
    """Append-only HNSW graph; immutable at serving time.

    Deletion is unsupported by design: the corpus is rebuilt on change.
    """

    def __init__(self, dim: int, params: HnswParams | None = None) -> None:
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self.params = params or HnswParams()
        self._ids: list[str] = []
        self._id_to_idx: dict[str, int] = {}
        self._levels: list[int] = []
        # _links[node][layer] -> neighbor node indexes
        self._links: list[list[list[int]]] = []
        self._entry: int | None = None
        self._max_level = -1
        self._rng = random.Random(self.params.seed)
        # 1/ln(M) keeps the expected layer population geometric in M
        self._level_mult = 1.0 / math.log(self.params.M)
        self._capacity = 256
        self._vectors = np.zeros((self._capacity, dim), dtype=np.float64)
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._id_to_idx

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def get_vector(self, entry_id: str) -> np.ndarray:
        idx = self._id_to_idx.get(entry_id)
        if idx is None:
            raise KeyError(entry_id)
        return self._vectors[idx].copy()

    # -- construction ------------------------------------------------------

    def insert(self, entry_id: str, vector: np.ndarray) -> None:
        if entry_id in self._id_to_idx:
            raise DuplicateIdError(f"id already indexed: {entry_id!r}")
        arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"expected dimension {self.dim}, got shape {arr.shape}"
            )
        vec = _unit(arr)

        idx = self._count
        self._grow_to(idx + 1)
        self._vectors[idx] = vec
        self._ids.append(entry_id)
        self._id_to_idx[entry_id] = idx
        level = self._sample_level()
        self._levels.append(level)
        self._links.append([[] for _ in range(level + 1)])
        self._count += 1

        if self._entry is None:
            self._entry = idx
            self._max_level = level
            return

        ep = self._entry
        ep_dist = 1.0 - float(self._vectors[ep] @ vec)
        # greedy descent through layers above the new node's level
        for layer in range(self._max_level, level, -1):
            ep, ep_dist = self._closest_on_layer(vec, ep, ep_dist, layer)

        entries = [(ep_dist, ep)]
        for layer in range(min(level, self._max_level), -1, -1):
            candidates = self._search_layer(vec, entries, self.params.ef_construction, layer)
            m_max = self._degree_bound(layer)
            neighbors = self._select_neighbors(candidates, self.params.M)
            self._links[idx][layer] = list(neighbors)
            for nb in neighbors:
                links = self._links[nb][layer]
                links.append(idx)
                if len(links) > m_max:
                    self._prune(nb, layer, m_max)
            entries = candidates

        if level > self._max_level:
            self._entry = idx
            self._max_level = level

    def _grow_to(self, n: int) -> None:
        if n <= self._capacity:
            return
        new_cap = max(self._capacity * 2, n)
        grown = np.zeros((new_cap, self.dim), dtype=np.float64)
        grown[: self._count] = self._vectors[: self._count]
        self._vectors = grown
        self._capacity = new_cap

    def _sample_level(self) -> int:
        # 1 - random() lies in (0, 1], avoiding log(0)
        return int(-math.log(1.0 - self._rng.random()) * self._level_mult)

    def _degree_bound(self, layer: int) -> int:
        return 2 * self.params.M if layer == 0 else self.params.M

    def _closest_on_layer(
        self, query: np.ndarray, start: int, start_dist: float, layer: int
    ) -> tuple[int, float]:
        """Greedy walk to the locally closest node on one layer."""
        vectors = self._vectors
        links = self._links
        current, current_dist = start, start_dist
        while True:
            neighbors = links[current][layer]
            if not neighbors:
                break
            dists = 1.0 - vectors.take(neighbors, axis=0) @ query
            best = int(np.argmin(dists))
            if dists[best] >= current_dist:
                break
            current = neighbors[best]
            current_dist = float(dists[best])
        return current, current_dist

    def _search_layer(
        self, query: np.ndarray, entries: list[tuple[float, int]], ef: int, layer: int
    ) -> list[tuple[float, int]]:
        """Beam search on one layer.

        *entries* carries (distance, node) seeds so distances computed on the
        layer above are not recomputed. Returns (distance, node) ascending.
        """
        vectors = self._vectors
        links = self._links
        push, pop, replace = heapq.heappush, heapq.heappop, heapq.heapreplace
        visited = bytearray(self._count)
        for _, node in entries:
            visited[node] = 1
        candidates = list(entries)  # min-heap by distance
        heapq.heapify(candidates)
        best = [(-dist, node) for dist, node in entries]  # max-heap, negated
        heapq.heapify(best)
        size = len(best)

        while candidates:
            dist, node = pop(candidates)
            if size >= ef and dist > -best[0][0]:
                break
            fresh = [n for n in links[node][layer] if not visited[n]]
            if not fresh:
                continue
            for n in fresh:
                visited[n] = 1
            dists = 1.0 - vectors.take(fresh, axis=0) @ query
            for nb, nb_dist in zip(fresh, dists.tolist()):
                if size < ef:
                    push(candidates, (nb_dist, nb))
                    push(best, (-nb_dist, nb))
                    size += 1
                elif nb_dist < -best[0][0]:
                    push(candidates, (nb_dist, nb))
                    replace(best, (-nb_dist, nb))

        out = [(-neg, node) for neg, node in best]
        out.sort()
        return out

    def _select_neighbors(self, candidates: list[tuple[float, int]], m: int) -> list[int]:
        """Diversity-aware neighbor selection.

        Walking candidates by ascending query distance, selecting one
        eliminates every later candidate that sits closer to it than to the
        query; pruned candidates backfill remaining slots.
        """
        count = len(candidates)
        if count <= m:
            return [node for _, node in candidates]
        nodes = [node for _, node in candidates]
        dists = np.fromiter((d for d, _ in candidates), dtype=np.float64, count=count)
        # float32 is plenty for the diversity test; halves the gemm cost
        vecs = self._vectors.take(nodes, axis=0).astype(np.float32, copy=False)
        pair_sim = vecs @ vecs.T
        alive = np.ones(count, dtype=bool)
        selected: list[int] = []
        for pos in range(count):
            if not alive[pos]:
                continue
            selected.append(pos)
            if len(selected) == m:
                break
            alive &= (1.0 - pair_sim[pos]) >= dists
        if len(selected) < m:
            chosen = set(selected)
            for pos in range(count):
                if pos not in chosen:
                    selected.append(pos)
                    if len(selected) == m:
                        break
        return [nodes[p] for p in selected]

    def _prune(self, node: int, layer: int, m_max: int) -> None:
        links = self._links[node][layer]
        dists = (1.0 - self._vectors.take(links, axis=0) @ self._vectors[node]).tolist()
        order = sorted(range(len(links)), key=lambda i: (dists[i], links[i]))
        candidates = [(dists[i], links[i]) for i in order]
        self._links[node][layer] = self._select_neighbors(candidates, m_max)

    # -- queries -----------------------------------------------------------

    def search(self, query: np.ndarray, k: int, ef: int | None = None) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be a positive integer")
        if self._count == 0 or self._entry is None:
            raise EmptyIndexError("search on empty index")
        arr = np.asarray(query, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"expected dimension {self.dim}, got shape {arr.shape}"
            )
        q = _unit(arr)

        ef_eff = max(ef if ef is not None else self.params.ef_search, k)
        ep = self._entry
        ep_dist = 1.0 - float(self._vectors[ep] @ q)
        for layer in range(self._max_level, 0, -1):
            ep, ep_dist = self._closest_on_layer(q, ep, ep_dist, layer)
        candidates = self._search_layer(q, [(ep_dist, ep)], ef_eff, 0)

        hits = [
            SearchHit(id=self._ids[node], score=float(self._vectors[node] @ q))
            for _dist, node in candidates
        ]
        hits.sort(key=lambda h: (-h.score, h.id))
        return hits[:k]

    def graph_stats(self) -> dict:
        """Structural summary used by diagnostics and degree-bound checks."""
        degrees: dict[int, int] = {}
        for node_links in self._links:
            for layer, links in enumerate(node_links):
                degrees[layer] = max(degrees.get(layer, 0), len(links))
        return {
            "count": self._count,
            "max_level": self._max_level,
            "max_degree_per_layer": degrees,
        }

    # -- persistence -------------------------------------------------------

    def save(self, path: Path | str) -> None:
        meta = {
            "dim": self.dim,
            "params": {
                "M": self.params.M,
                "ef_construction": self.params.ef_construction,
                "ef_search": self.params.ef_search,
                "seed": self.params.seed,
            },
            "count": self._count,
            "ids": self._ids,
            "levels": self._levels,
            "links": self._links,
            "entry": self._entry,
            "max_level": self._max_level,
        }
        meta_bytes = json.dumps(meta, separators=(",", ":")).encode("utf-8")
        vec_bytes = self._vectors[: self._count].tobytes()
        payload = struct.pack("<I", len(meta_bytes)) + meta_bytes + vec_bytes
        write_snapshot(path, SNAPSHOT_KIND, SNAPSHOT_VERSION, payload)

    @classmethod
    def load(cls, path: Path | str) -> "HnswIndex":
        payload = read_snapshot(path, SNAPSHOT_KIND, SNAPSHOT_VERSION)
        (meta_len,) = struct.unpack_from("<I", payload)
        meta = json.loads(payload[4 : 4 + meta_len].decode("utf-8"))
        params = HnswParams(**meta["params"])
        index = cls(dim=meta["dim"], params=params)
        count = meta["count"]
        vec_bytes = payload[4 + meta_len :]
        vectors = np.frombuffer(vec_bytes, dtype=np.float64).reshape(count, meta["dim"])
        index._grow_to(count)
        index._vectors[:count] = vectors
        index._count = count
        index._ids = list(meta["ids"])
        index._id_to_idx = {eid: i for i, eid in enumerate(index._ids)}
        index._levels = list(meta["levels"])
        index._links = [[list(l) for l in node] for node in meta["links"]]
        index._entry = meta["entry"]
        index._max_level = meta["max_level"]
        # replaying inserts would need the original stream; freeze a fresh
        # generator so post-load inserts stay deterministic per (seed, count)
        index._rng = random.Random(params.seed)
        for _ in range(count):
            index._rng.random()
        return index
