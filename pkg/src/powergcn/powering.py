"""Graph powering: exact k-distance adjacency families, feature-driven
sparsification, and the weighted power / normalized convolution operators.

The distance family {A^(0), ..., A^(r)} partitions the support of the
r-th boolean power of (I + A): entry (i, j) lives in exactly one A^(k),
the one matching the shortest-path distance. The weighted operator is
sum_k theta_k * A^(k) (optionally over the pruned slices), and the network
convolution is its degree-renormalized form.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graphs import Graph, _gather_neighbors

#: Sentinel budget meaning "keep every far edge".
KEEP_ALL = float("inf")

_BFS_BLOCK = 512  # sources per batch in family construction


@dataclass(frozen=True)
class ThetaVector:
    """Per-distance weights theta_0..theta_r of the power operator."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("theta must be a non-empty 1-d vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("theta entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def order(self) -> int:
        return self.values.size - 1

    @property
    def l1(self) -> float:
        return float(np.abs(self.values).sum())


class DistanceAdjacencyFamily:
    """Exact-distance adjacency structures A^(k) for k = 0..r.

    `slices[k]` is a CSR matrix with unit entries exactly where the
    shortest distance is k (k=0 is the identity support). After
    :func:`sparsify`, `pruned[k]` holds the surviving subsets; distance
    0 and 1 slices are never pruned.
    """

    def __init__(self, graph: Graph, r: int, slices: list[sp.csr_matrix]):
        self.graph = graph
        self.r = r
        self.slices = slices
        self.pruned: list[sp.csr_matrix] | None = None

    @property
    def n(self) -> int:
        return self.graph.n

    def active(self) -> list[sp.csr_matrix]:
        """Pruned slices when sparsified, raw slices otherwise."""
        return self.pruned if self.pruned is not None else self.slices

    def check_disjoint(self) -> None:
        """Every pair (i, j) must appear in at most one distance slice."""
        acc = sp.csr_matrix((self.n, self.n), dtype=np.int64)
        for a in self.slices:
            acc = acc + a.astype(np.int64)
        assert acc.nnz == 0 or acc.data.max() <= 1, "distance supports overlap"


def distance_adjacency_family(graph: Graph, r: int) -> DistanceAdjacencyFamily:
    """Compute A^(k) for k = 0..r by truncated BFS from every node.

    Sources are processed in blocks with a dense per-block distance table;
    each block's rows are independent, so results do not depend on block
    order or scheduling.
    """
    if r < 1:
        raise ValueError("power order r must be >= 1")
    n = graph.n
    rows: list[list[np.ndarray]] = [[] for _ in range(r + 1)]
    cols: list[list[np.ndarray]] = [[] for _ in range(r + 1)]
    indptr, indices = graph.indptr, graph.indices

    for start in range(0, n, _BFS_BLOCK):
        sources = np.arange(start, min(start + _BFS_BLOCK, n), dtype=np.int64)
        b = sources.size
        seen = np.zeros((b, n), dtype=bool)
        seen[np.arange(b), sources] = True
        f_src = np.arange(b, dtype=np.int64)   # local source id per frontier node
        f_node = sources.copy()
        for level in range(1, r + 1):
            if f_node.size == 0:
                break
            counts = indptr[f_node + 1] - indptr[f_node]
            neigh = _gather_neighbors(indptr, indices, f_node)
            src = np.repeat(f_src, counts)
            # dedupe (source, neighbor) pairs, then keep first-time visits
            key = src * n + neigh
            key = np.unique(key)
            src, neigh = key // n, key % n
            fresh = ~seen[src, neigh]
            src, neigh = src[fresh], neigh[fresh]
            seen[src, neigh] = True
            rows[level].append(sources[src])
            cols[level].append(neigh)
            f_src, f_node = src, neigh

    slices = [sp.identity(n, format="csr", dtype=np.float64)]
    for k in range(1, r + 1):
        if rows[k]:
            i = np.concatenate(rows[k])
            j = np.concatenate(cols[k])
            a = sp.csr_matrix((np.ones(i.size), (i, j)), shape=(n, n))
        else:
            a = sp.csr_matrix((n, n), dtype=np.float64)
        a.sort_indices()
        slices.append(a)
    return DistanceAdjacencyFamily(graph, r, slices)


def powered_graph(graph: Graph, k: int) -> Graph:
    """Graph connecting every pair at shortest distance <= k."""
    if k < 1:
        raise ValueError("power order must be >= 1")
    family = distance_adjacency_family(graph, k)
    union = family.slices[1]
    for a in family.slices[2:]:
        union = union + a
    coo = sp.coo_matrix(union)
    mask = coo.row < coo.col
    return Graph._from_canonical(graph.n, np.column_stack([coo.row[mask], coo.col[mask]]).astype(np.int64))


def sparsify(
    family: DistanceAdjacencyFamily,
    features: sp.csr_matrix | np.ndarray,
    phi_kind: str = "cosine",
    budget_factor: float = 1.0,
) -> DistanceAdjacencyFamily:
    """Prune far (k >= 2) edges by feature aloofness under a per-node budget.

    Each node ranks its far candidates by ascending phi (ties broken by the
    smaller neighbor index) and nominates the top ceil(budget_factor * deg)
    of them, deg being its original degree. An edge survives if either
    endpoint nominates it. Distance-0/1 slices are always kept intact.
    Fills `family.pruned` in place and returns the family.
    """
    if budget_factor < 0:
        raise ValueError("budget_factor must be >= 0")
    n = family.n
    pruned = [family.slices[0].copy(), family.slices[1].copy()]
    far = family.slices[2:]
    if not far:
        family.pruned = pruned
        return family
    if budget_factor == KEEP_ALL:
        family.pruned = pruned + [a.copy() for a in far]
        return family

    union = far[0]
    for a in far[1:]:
        union = union + a
    union = sp.csr_matrix(union)
    union.sort_indices()
    coo = sp.coo_matrix(union)
    cand_i, cand_j = coo.row.astype(np.int64), coo.col.astype(np.int64)

    phi = _aloofness(features, cand_i, cand_j, phi_kind)

    deg = family.graph.degrees
    budget = np.ceil(budget_factor * deg).astype(np.int64)

    keep = np.zeros(cand_i.size, dtype=bool)
    # candidates are CSR-ordered: group by i, rank each row by (phi, j)
    row_start = union.indptr
    for i in range(n):
        lo, hi = row_start[i], row_start[i + 1]
        q = budget[i]
        if hi == lo or q == 0:
            continue
        if hi - lo <= q:
            keep[lo:hi] = True
            continue
        order = np.lexsort((cand_j[lo:hi], phi[lo:hi]))
        keep[lo + order[:q]] = True

    # OR-survival: an edge lives if either direction was nominated
    nominated = sp.coo_matrix((np.ones(int(keep.sum())), (cand_i[keep], cand_j[keep])), shape=(n, n))
    survived = sp.csr_matrix(nominated + nominated.T)
    survived.data[:] = 1.0

    for a in far:
        kept = a.multiply(survived)
        kept = sp.csr_matrix(kept)
        kept.sort_indices()
        pruned.append(kept)
    family.pruned = pruned
    return family


def _aloofness(features, i_idx: np.ndarray, j_idx: np.ndarray, phi_kind: str) -> np.ndarray:
    """Pairwise feature distance for candidate endpoints, chunked."""
    if phi_kind not in ("cosine", "euclidean"):
        raise ValueError(f"unknown phi '{phi_kind}'")
    x = sp.csr_matrix(features) if not sp.issparse(features) else features.tocsr()
    if phi_kind == "cosine":
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
        zero = norms == 0
        inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, norms))
        x = sp.diags(inv) @ x
    out = np.empty(i_idx.size, dtype=np.float64)
    chunk = 1 << 16
    for s in range(0, i_idx.size, chunk):
        ii, jj = i_idx[s : s + chunk], j_idx[s : s + chunk]
        xi, xj = x[ii], x[jj]
        if phi_kind == "cosine":
            sim = np.asarray(xi.multiply(xj).sum(axis=1)).ravel()
            out[s : s + chunk] = 1.0 - sim
        else:
            diff = xi - xj
            out[s : s + chunk] = np.sqrt(np.asarray(diff.multiply(diff).sum(axis=1)).ravel())
    if phi_kind == "cosine":
        # rows with zero norm carry no signal: maximal aloofness
        bad = zero[i_idx] | zero[j_idx]
        out[bad] = 2.0
    return out


@dataclass
class PowerOperator:
    """Weighted sum of distance slices: sum_k theta_k * A^(k)."""

    matrix: sp.csr_matrix
    theta: ThetaVector
    family: DistanceAdjacencyFamily

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def assemble_power_operator(
    family: DistanceAdjacencyFamily, theta, use_pruned: bool | None = None
) -> PowerOperator:
    """Combine distance slices with weights theta_0..theta_r.

    Uses the pruned slices when available (or as forced by `use_pruned`).
    """
    theta = theta if isinstance(theta, ThetaVector) else ThetaVector(np.asarray(theta))
    if theta.order != family.r:
        raise ValueError(f"theta length {theta.order + 1} != r+1 = {family.r + 1}")
    if use_pruned is None:
        slices = family.active()
    elif use_pruned:
        if family.pruned is None:
            raise ValueError("family has no pruned slices")
        slices = family.pruned
    else:
        slices = family.slices
    n = family.n
    acc = sp.csr_matrix((n, n), dtype=np.float64)
    for t, a in zip(theta.values, slices):
        if t != 0.0:
            acc = acc + t * a
    acc = sp.csr_matrix(acc)
    acc.sort_indices()
    return PowerOperator(matrix=acc, theta=theta, family=family)


def _inv_sqrt_renorm_degrees(graph: Graph) -> np.ndarray:
    # D_ii = 1 + deg(i) in the original graph; always >= 1
    return 1.0 / np.sqrt(1.0 + graph.degrees.astype(np.float64))


def symmetric_normalize(matrix: sp.csr_matrix, inv_sqrt: np.ndarray) -> sp.csr_matrix:
    """Exactly symmetric D^{-1/2} M D^{-1/2} for symmetric M.

    The scale factor s_i * s_j is computed once per entry, so mirrored
    entries receive bitwise-identical values.
    """
    coo = sp.coo_matrix(matrix)
    data = coo.data * (inv_sqrt[coo.row] * inv_sqrt[coo.col])
    out = sp.csr_matrix((data, (coo.row, coo.col)), shape=matrix.shape)
    out.sort_indices()
    return out


def vpn_convolution(operator: PowerOperator, graph: Graph) -> sp.csr_matrix:
    """Network convolution D^{-1/2} (I + M_theta) D^{-1/2}.

    D uses the degrees of the original graph plus one, independent of the
    power order or pruning.
    """
    if operator.n != graph.n:
        raise ValueError("operator and graph sizes differ")
    inv_sqrt = _inv_sqrt_renorm_degrees(graph)
    base = sp.identity(graph.n, format="csr", dtype=np.float64) + operator.matrix
    return symmetric_normalize(sp.csr_matrix(base), inv_sqrt)


def vanilla_gcn_convolution(graph: Graph) -> sp.csr_matrix:
    """Renormalized baseline operator D^{-1/2} (I + A) D^{-1/2}."""
    inv_sqrt = _inv_sqrt_renorm_degrees(graph)
    base = sp.identity(graph.n, format="csr", dtype=np.float64) + graph.adjacency()
    return symmetric_normalize(sp.csr_matrix(base), inv_sqrt)


def normalized_vpn_slices(family: DistanceAdjacencyFamily) -> list[sp.csr_matrix]:
    """Per-distance renormalized slices D^{-1/2} A^(k) D^{-1/2}.

    These are the partial derivatives of the VPN convolution with respect
    to theta_k; the full operator is D^{-1} (the constant I term) plus the
    theta-weighted sum of them.
    """
    inv_sqrt = _inv_sqrt_renorm_degrees(family.graph)
    return [symmetric_normalize(a, inv_sqrt) for a in family.active()]


def degree_histogram(graph: Graph, bin_cap: int) -> np.ndarray:
    """Counts per degree 0..bin_cap, degrees >= bin_cap merged into the top bin."""
    if bin_cap < 1:
        raise ValueError("bin_cap must be >= 1")
    deg = np.minimum(graph.degrees, bin_cap)
    return np.bincount(deg, minlength=bin_cap + 1)


# -- triplet text export -------------------------------------------------

def write_triplets(path: str | Path, matrix: sp.spmatrix) -> None:
    """Write a sparse matrix as 'i j value' lines under an 'n n nnz' header."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as f:
        f.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {v:.17g}\n")


def read_triplets(path: str | Path) -> sp.csr_matrix:
    path = Path(path)
    header = path.open().readline().split()
    n, m, nnz = int(header[0]), int(header[1]), int(header[2])
    trip = np.loadtxt(path, skiprows=1, ndmin=2)
    if trip.shape[0] != nnz:
        raise ValueError(f"{path}: header declares {nnz} entries, found {trip.shape[0]}")
    if nnz == 0:
        return sp.csr_matrix((n, m))
    return sp.csr_matrix((trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))), shape=(n, m))
