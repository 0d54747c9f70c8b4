"""Symmetric eigensolver, spectral-separation diagnostics, community
recovery, and small-instance brute-force oracles.

The solver is block power iteration with modified Gram-Schmidt
orthonormalization and Rayleigh-Ritz extraction each sweep. It targets the
leading eigenvalues by magnitude, which is what the separation diagnostics
need; the projected (block x block) problem is solved densely.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp

from .graphs import Graph
from .powering import PowerOperator


class EigensolverConvergenceError(RuntimeError):
    """Raised when the residual target is not met within max_iter."""

    def __init__(self, residuals: np.ndarray, iterations: int):
        self.residuals = residuals
        self.iterations = iterations
        super().__init__(
            f"no convergence after {iterations} iterations; "
            f"last residuals {np.array2string(residuals, precision=3)}"
        )


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray


def _check_symmetric(matrix) -> None:
    if matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    if sp.issparse(matrix):
        diff = (matrix - matrix.T).tocoo()
        skew = np.abs(diff.data).max() if diff.nnz else 0.0
        scale = np.abs(matrix.data).max() if matrix.nnz else 0.0
    else:
        skew = np.abs(matrix - matrix.T).max() if matrix.size else 0.0
        scale = np.abs(matrix).max() if matrix.size else 0.0
    if skew > 1e-10 * max(1.0, scale):
        raise ValueError(f"matrix is not symmetric (max asymmetry {skew:.3g})")


def _mgs_orthonormalize(block: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Columns that collapse numerically are replaced by fresh random vectors
    (orthogonalized again), so the block never loses rank.
    """
    n, b = block.shape
    q = block.copy()
    for j in range(b):
        for _attempt in range(3):
            for i in range(j):
                q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
            norm = np.linalg.norm(q[:, j])
            if norm > 1e-12:
                q[:, j] /= norm
                break
            q[:, j] = rng.standard_normal(n)
        else:
            raise RuntimeError("could not orthonormalize block")
    return q


def top_eigenpairs(
    matrix,
    m: int,
    tol: float = 1e-8,
    max_iter: int = 5000,
    seed: int = 0,
    oversample: int = 2,
) -> list[EigenPair]:
    """Leading m eigenpairs by magnitude of a symmetric matrix.

    Residual contract: ||M v - lambda v|| <= tol * max(1, |lambda|) for each
    returned pair. Deterministic for a fixed seed. Raises
    EigensolverConvergenceError (with the last residuals) on failure and
    ValueError on asymmetric input.
    """
    _check_symmetric(matrix)
    n = matrix.shape[0]
    if not (1 <= m <= n):
        raise ValueError(f"m must be in [1, {n}]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    b = min(n, m + max(0, oversample))
    v = _mgs_orthonormalize(rng.standard_normal((n, b)), rng)

    residuals = np.full(m, np.inf)
    for iteration in range(max_iter + 1):
        w = matrix @ v
        h = v.T @ w
        h = (h + h.T) / 2.0
        mu, c = np.linalg.eigh(h)
        order = np.argsort(-np.abs(mu), kind="stable")
        mu, c = mu[order], c[:, order]
        ritz = v @ c
        resid_block = w @ c - ritz * mu
        residuals = np.linalg.norm(resid_block[:, :m], axis=0)
        target = tol * np.maximum(1.0, np.abs(mu[:m]))
        if np.all(residuals <= target):
            pairs = []
            for i in range(m):
                vec = ritz[:, i]
                vec = vec / np.linalg.norm(vec)
                pairs.append(EigenPair(value=float(mu[i]), vector=vec))
            return pairs
        if iteration == max_iter:
            break
        v = _mgs_orthonormalize(w, rng)
    raise EigensolverConvergenceError(residuals, max_iter)


@dataclass(frozen=True)
class SeparationReport:
    """Top-of-spectrum summary: signed leading eigenvalues (magnitude
    ordered) and the magnitude gap ratios between them."""

    lam1: float
    lam2: float
    lam3: float
    gap12: float
    gap23: float
    r: int | None = None
    theta_l1: float | None = None
    n: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _gap(num: float, den: float) -> float:
    a, b = abs(num), abs(den)
    if b == 0.0:
        return float("nan") if a == 0.0 else float("inf")
    return a / b


def separation_report(
    operator,
    tol: float = 1e-8,
    max_iter: int = 5000,
    seed: int = 0,
    r: int | None = None,
    theta_l1: float | None = None,
) -> SeparationReport:
    """Compute the top-3 magnitude eigenvalues and gap ratios.

    Accepts a PowerOperator (r and ||theta||_1 recorded automatically) or
    any symmetric matrix.
    """
    if isinstance(operator, PowerOperator):
        matrix = operator.matrix
        r = operator.family.r if r is None else r
        theta_l1 = operator.theta.l1 if theta_l1 is None else theta_l1
    else:
        matrix = operator
    n = matrix.shape[0]
    m = min(3, n)
    pairs = top_eigenpairs(matrix, m, tol=tol, max_iter=max_iter, seed=seed)
    lams = [p.value for p in pairs] + [0.0] * (3 - m)
    return SeparationReport(
        lam1=lams[0],
        lam2=lams[1],
        lam3=lams[2],
        gap12=_gap(lams[0], lams[1]),
        gap23=_gap(lams[1], lams[2]),
        r=r,
        theta_l1=theta_l1,
        n=n,
        seed=seed,
    )


def recover_communities(matrix, tol: float = 1e-8, max_iter: int = 5000, seed: int = 0) -> np.ndarray:
    """Spectral bisection: sign pattern of the second-magnitude eigenvector.

    Zero entries are assigned +1 so the output is always a full +-1 labeling.
    """
    pairs = top_eigenpairs(matrix, 2, tol=tol, max_iter=max_iter, seed=seed)
    v = pairs[1].vector
    return np.where(v < 0, -1, 1).astype(np.int64)


def community_overlap(pred: np.ndarray, truth: np.ndarray) -> float:
    """|<pred, truth>| / n, invariant to a global label flip."""
    return abs(float(pred @ truth)) / truth.size


def self_avoiding_count_matrix(graph: Graph, k: int, node_cap: int = 64) -> np.ndarray:
    """Count self-avoiding paths of length exactly k between all pairs.

    Exhaustive DFS with visited sets; exponential, so instances beyond
    `node_cap` nodes or k > 6 are refused. Diagonal is 0 by definition
    (a self-avoiding path cannot return to its start).
    """
    if graph.n > node_cap:
        raise ValueError(f"n={graph.n} exceeds oracle cap {node_cap}")
    if not (1 <= k <= 6):
        raise ValueError("k must be in 1..6 for the brute-force oracle")
    n = graph.n
    counts = np.zeros((n, n), dtype=np.int64)
    visited = np.zeros(n, dtype=bool)

    def dfs(start: int, node: int, depth: int):
        if depth == k:
            counts[start, node] += 1
            return
        visited[node] = True
        for nxt in graph.neighbors(node):
            if not visited[nxt]:
                dfs(start, nxt, depth + 1)
        visited[node] = False

    for s in range(n):
        dfs(s, s, 0)
    np.fill_diagonal(counts, 0)
    return counts


def prop5_weights(
    phi1: np.ndarray,
    phi2: np.ndarray,
    lam1: float,
    lam2: float,
    features,
) -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
    """Constructive 2-layer weights that decode a two-community structure.

    W1 maps features onto the two leading eigenvectors (least squares), and
    W2 is the closed form
        [[-1/(lam1*lam2),  1/(lam1*lam2)],
         [ 2/lam2**2,     -2/lam2**2]].

    Returns (W1, W2, residuals) where residuals are the least-squares
    misfit norms of phi1 and phi2; nonzero residuals mean the eigenvectors
    are not exactly in the feature span and recovery is only approximate.
    """
    if lam1 <= 0 or lam2 <= 0:
        raise ValueError("eigenvalues must be positive")
    if lam2 < 1e-8:
        raise ValueError("lam2 below 1e-8: weight construction ill-conditioned")
    targets = np.column_stack([phi1, phi2])
    if sp.issparse(features):
        w_cols, residuals = [], []
        for t in range(2):
            sol = sp.linalg.lsqr(features, targets[:, t], atol=1e-12, btol=1e-12)
            w_cols.append(sol[0])
            residuals.append(float(sol[3]))
        w1 = np.column_stack(w_cols)
    else:
        x = np.asarray(features, dtype=np.float64)
        w1, _, _, _ = np.linalg.lstsq(x, targets, rcond=None)
        res = targets - x @ w1
        residuals = [float(np.linalg.norm(res[:, 0])), float(np.linalg.norm(res[:, 1]))]
    w2 = np.array(
        [
            [-1.0 / (lam1 * lam2), 1.0 / (lam1 * lam2)],
            [2.0 / lam2**2, -2.0 / lam2**2],
        ]
    )
    return w1, w2, (residuals[0], residuals[1])


def prop5_predict(matrix, features, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Run the constructed 2-layer pass and read memberships off the argmax.

    Column 0 winning maps to +1. Ties (both logits equal) also map to +1,
    matching the deterministic zero convention used elsewhere.
    """
    xw = features @ w1
    xw = np.asarray(xw.todense()) if sp.issparse(xw) else np.asarray(xw)
    h1 = np.maximum(matrix @ xw, 0.0)
    y = matrix @ h1 @ w2
    return np.where(y[:, 0] >= y[:, 1], 1, -1).astype(np.int64)
