"""Sparse undirected graph core: CSR storage, dataset ingestion, SBM sampling, BFS.

Everything downstream (powering, spectra, training, attacks) is built on the
Graph type defined here. Graphs are simple (no self-loops, no duplicate
edges), undirected, with dense 0-based node ids and sorted neighbor lists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

#: Distance value for nodes outside the BFS radius.
UNREACHABLE = np.int16(-1)

#: Label for nodes without a class assignment. Deliberately not a valid
#: class id, so accidental use as a class shows up immediately.
UNLABELED = -1


class Graph:
    """Immutable simple undirected graph in CSR (sorted-neighbor) form.

    Parameters
    ----------
    n : int
        Number of nodes; ids are 0..n-1.
    indptr, indices : ndarray
        CSR row pointers (n+1,) and column indices (2|E|,). Neighbor lists
        must be sorted ascending and symmetric. Use :meth:`from_edges` unless
        you already have canonical CSR arrays.
    """

    __slots__ = ("n", "indptr", "indices")

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.indptr.flags.writeable = False
        self.indices.flags.writeable = False

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        """Build a graph from an iterable of (i, j) pairs.

        Self-loops and duplicates are dropped silently here; use
        :func:`canonical_edges` first if you need the drop counts.
        """
        edges, _, _ = canonical_edges(n, edges)
        return cls._from_canonical(n, edges)

    @classmethod
    def _from_canonical(cls, n: int, edges: np.ndarray) -> "Graph":
        # edges: (m, 2) with i < j, unique rows
        if edges.size == 0:
            return cls(n, np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64))
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n, indptr, dst)

    # -- basic queries -------------------------------------------------

    @property
    def edge_count(self) -> int:
        return self.indices.size // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degree(self, i: int) -> int:
        return int(self.indptr[i + 1] - self.indptr[i])

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def has_edge(self, i: int, j: int) -> bool:
        row = self.neighbors(i)
        pos = np.searchsorted(row, j)
        return pos < row.size and row[pos] == j

    def edge_array(self) -> np.ndarray:
        """Canonical (m, 2) edge list with i < j, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    def adjacency(self, dtype=np.float64) -> sp.csr_matrix:
        """CSR adjacency matrix with unit weights."""
        data = np.ones(self.indices.size, dtype=dtype)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def check_invariants(self) -> None:
        """Assert symmetry, sortedness, and absence of loops/duplicates."""
        for i in range(self.n):
            row = self.neighbors(i)
            assert np.all(np.diff(row) > 0), f"row {i} not strictly sorted"
            assert not np.any(row == i), f"self-loop at {i}"
        a = self.adjacency(dtype=np.int8)
        assert (a != a.T).nnz == 0, "adjacency not symmetric"


def canonical_edges(n: int, edges) -> tuple[np.ndarray, int, int]:
    """Canonicalize an edge list: drop self-loops and duplicates, orient i < j.

    Returns
    -------
    (edges, n_self_loops, n_duplicates)
        edges is a unique (m, 2) int64 array sorted lexicographically.
    """
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2), 0, 0
    arr = arr.reshape(-1, 2)
    if arr.min() < 0 or arr.max() >= n:
        raise ValueError(f"edge endpoint out of range [0, {n})")
    loops = arr[:, 0] == arr[:, 1]
    n_loops = int(loops.sum())
    arr = arr[~loops]
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    arr = np.column_stack([lo, hi])
    uniq = np.unique(arr, axis=0) if arr.size else arr
    n_dupes = arr.shape[0] - uniq.shape[0]
    return uniq, n_loops, n_dupes


@dataclass(frozen=True)
class NodeData:
    """Features, labels and train/val/test splits attached to a graph."""

    features: sp.csr_matrix            # n x d
    labels: np.ndarray                 # int array, UNLABELED where unknown
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValueError("labels length must equal node count")
        splits = [self.train_idx, self.val_idx, self.test_idx]
        seen = set()
        for idx in splits:
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError("split index out of range")
            s = set(idx.tolist())
            if len(s) != idx.size or seen & s:
                raise ValueError("splits must be disjoint index sets")
            seen |= s
        labeled = self.labels[self.train_idx]
        if np.any(labeled == UNLABELED):
            raise ValueError("every train index must carry a label")
        valid = self.labels[self.labels != UNLABELED]
        if valid.size and (valid.min() < 0 or valid.max() >= self.num_classes):
            raise ValueError("label outside declared class count")


@dataclass(frozen=True)
class SbmParams:
    """Two-level stochastic block model parameters.

    Connection probabilities are a_intra/n within a community and a_inter/n
    across communities; both must land in [0, 1].
    """

    n: int
    k: int
    a_intra: float
    a_inter: float
    seed: int = 0

    def __post_init__(self):
        if self.n <= 0 or self.k <= 0:
            raise ValueError("n and k must be positive")
        if self.n % self.k != 0:
            raise ValueError("n must be divisible by k for a balanced partition")
        for a in (self.a_intra, self.a_inter):
            if not (0.0 <= a / self.n <= 1.0):
                raise ValueError(f"connection probability {a}/{self.n} outside [0, 1]")

    @property
    def xi1(self) -> float:
        return (self.a_intra + self.a_inter) / 2.0

    @property
    def xi2(self) -> float:
        return (self.a_intra - self.a_inter) / 2.0

    @property
    def snr(self) -> float:
        """Detectability ratio xi2^2 / xi1 (weak recovery needs > 1)."""
        return self.xi2**2 / self.xi1 if self.xi1 > 0 else float("nan")


def sbm_generate(params: SbmParams, rng: np.random.Generator | None = None) -> tuple[Graph, np.ndarray]:
    """Sample a graph from the block model.

    Nodes are split into k equal communities by a random permutation; each
    unordered pair is then connected independently with the intra or inter
    probability. For k=2 the returned labels are +-1; otherwise community
    ids 0..k-1.
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    n, k = params.n, params.k
    perm = rng.permutation(n)
    comm = np.empty(n, dtype=np.int64)
    size = n // k
    for c in range(k):
        comm[perm[c * size : (c + 1) * size]] = c

    p_intra = params.a_intra / n
    p_inter = params.a_inter / n
    iu, ju = np.triu_indices(n, k=1)
    same = comm[iu] == comm[ju]
    probs = np.where(same, p_intra, p_inter)
    keep = rng.random(iu.size) < probs
    edges = np.column_stack([iu[keep], ju[keep]])
    graph = Graph._from_canonical(n, edges.astype(np.int64))
    if k == 2:
        labels = np.where(comm == 0, 1, -1).astype(np.int64)
    else:
        labels = comm
    return graph, labels


def bounded_bfs(graph: Graph, source: int, r: int) -> np.ndarray:
    """Exact shortest-path distances from `source`, truncated at radius `r`.

    Returns an int16 array with distances in 0..r and UNREACHABLE (-1) for
    nodes farther than r. Never visits a node beyond distance r.
    """
    if not (0 <= source < graph.n):
        raise ValueError("source out of range")
    if r < 0:
        raise ValueError("radius must be >= 0")
    dist = np.full(graph.n, UNREACHABLE, dtype=np.int16)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    indptr, indices = graph.indptr, graph.indices
    for level in range(1, min(r, graph.n) + 1):
        if frontier.size == 0:
            break
        neigh = _gather_neighbors(indptr, indices, frontier)
        neigh = np.unique(neigh)
        neigh = neigh[dist[neigh] == UNREACHABLE]
        dist[neigh] = level
        frontier = neigh
    return dist


def multi_source_ball(graph: Graph, sources: np.ndarray, radius: int) -> np.ndarray:
    """Sorted array of nodes within `radius` of any source (union of balls)."""
    sources = np.unique(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        return sources
    seen = np.zeros(graph.n, dtype=bool)
    seen[sources] = True
    frontier = sources
    for _ in range(radius):
        if frontier.size == 0:
            break
        neigh = np.unique(_gather_neighbors(graph.indptr, graph.indices, frontier))
        neigh = neigh[~seen[neigh]]
        seen[neigh] = True
        frontier = neigh
    return np.flatnonzero(seen)


def _gather_neighbors(indptr: np.ndarray, indices: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Concatenated neighbor lists of `nodes`, without a python-level loop."""
    counts = indptr[nodes + 1] - indptr[nodes]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = np.repeat(indptr[nodes], counts)
    offsets = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    return indices[starts + offsets]


def permute_graph(graph: Graph, pi: np.ndarray) -> Graph:
    """Relabel nodes: edge (i, j) maps to (pi[i], pi[j])."""
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (graph.n,) or not np.array_equal(np.sort(pi), np.arange(graph.n)):
        raise ValueError("permutation must be a bijection on [0, n)")
    edges = graph.edge_array()
    return Graph.from_edges(graph.n, np.column_stack([pi[edges[:, 0]], pi[edges[:, 1]]]))


# -- plain-text dataset bundle ------------------------------------------

@dataclass
class LoadReport:
    """Counts of malformed input lines dropped during ingestion."""

    self_loops: int = 0
    duplicates: int = 0


def load_graph_text(path: str | Path) -> tuple[Graph, NodeData]:
    """Load a dataset bundle directory.

    Expected files: edges.txt ("i j" per line), features.txt (header
    "n d nnz" then "i j value" triplets), labels.txt ("i label" per line),
    splits.txt (three lines: train / val / test indices), meta.txt
    (key=value lines, at least `classes`).

    Self-loop and duplicate edge lines are dropped with a logged count.
    """
    path = Path(path)
    for fname in ("edges.txt", "features.txt", "labels.txt", "splits.txt", "meta.txt"):
        if not (path / fname).is_file():
            raise FileNotFoundError(f"dataset bundle missing {fname} under {path}")

    meta = {}
    for line in (path / "meta.txt").read_text().splitlines():
        line = line.strip()
        if line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    num_classes = int(meta["classes"])
    name = meta.get("name", path.name)

    header, *_ = (path / "features.txt").read_text().split("\n", 1)
    n, d, nnz = (int(x) for x in header.split())
    trip = np.loadtxt(path / "features.txt", skiprows=1, ndmin=2)
    if trip.shape[0] != nnz:
        raise ValueError(f"features.txt declares {nnz} triplets, found {trip.shape[0]}")
    rows = trip[:, 0].astype(np.int64)
    cols = trip[:, 1].astype(np.int64)
    if nnz and (rows.max() >= n or cols.max() >= d or rows.min() < 0 or cols.min() < 0):
        raise ValueError("feature triplet index out of range")
    features = sp.csr_matrix((trip[:, 2], (rows, cols)), shape=(n, d))

    raw_edges = np.loadtxt(path / "edges.txt", dtype=np.int64, ndmin=2)
    if raw_edges.size == 0:
        raw_edges = raw_edges.reshape(0, 2)
    edges, n_loops, n_dupes = canonical_edges(n, raw_edges)
    if n_loops or n_dupes:
        log.warning(
            "%s: dropped %d self-loop and %d duplicate edge lines", name, n_loops, n_dupes
        )
    graph = Graph._from_canonical(n, edges)

    labels = np.full(n, UNLABELED, dtype=np.int64)
    lab = np.loadtxt(path / "labels.txt", dtype=np.int64, ndmin=2)
    if lab.size:
        if lab[:, 0].min() < 0 or lab[:, 0].max() >= n:
            raise ValueError("label node index out of range")
        labels[lab[:, 0]] = lab[:, 1]

    split_lines = (path / "splits.txt").read_text().splitlines()
    if len(split_lines) < 3:
        raise ValueError("splits.txt must have three lines: train, val, test")
    splits = [
        np.array([int(x) for x in line.split()], dtype=np.int64) for line in split_lines[:3]
    ]
    data = NodeData(
        features=features,
        labels=labels,
        train_idx=splits[0],
        val_idx=splits[1],
        test_idx=splits[2],
        num_classes=num_classes,
        name=name,
    )
    return graph, data


def save_graph_text(path: str | Path, graph: Graph, data: NodeData) -> None:
    """Write a dataset bundle in the same plain-text layout load_graph_text reads."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    edges = graph.edge_array()
    with open(path / "edges.txt", "w") as f:
        for i, j in edges:
            f.write(f"{i} {j}\n")
    feat = sp.coo_matrix(data.features)
    with open(path / "features.txt", "w") as f:
        f.write(f"{feat.shape[0]} {feat.shape[1]} {feat.nnz}\n")
        for i, j, v in zip(feat.row, feat.col, feat.data):
            f.write(f"{i} {j} {v:.17g}\n")
    with open(path / "labels.txt", "w") as f:
        for i, lab in enumerate(data.labels):
            if lab != UNLABELED:
                f.write(f"{i} {lab}\n")
    with open(path / "splits.txt", "w") as f:
        for idx in (data.train_idx, data.val_idx, data.test_idx):
            f.write(" ".join(str(i) for i in idx) + "\n")
    with open(path / "meta.txt", "w") as f:
        f.write(f"classes={data.num_classes}\n")
        f.write(f"name={data.name}\n")
