"""UMAP reduction implemented from first principles: exact k-NN graph,
fuzzy simplicial set with per-point bandwidth search, spectral
initialization, and sequential negative-sampling SGD layout (numba-compiled
for speed, single-threaded for determinism).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit

SMOOTH_K_TOLERANCE = 1e-5


@dataclass
class UmapConfig:
    n_neighbors: int = 60
    min_dist: float = 0.0
    n_components: int = 2
    n_epochs: int = 200
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    seed: int = 0
    a: float | None = None  # fitted from min_dist when None
    b: float | None = None


@dataclass
class FuzzyGraph:
    matrix: sp.csr_matrix  # symmetric, weights in (0, 1]
    rho: np.ndarray
    sigma: np.ndarray


def knn_graph(points, k):
    """Exact Euclidean k-NN by brute force.

    Returns (indices [N, k], distances [N, k]) sorted by ascending distance,
    excluding each point itself.  Duplicate points (zero distances) are fine.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n <= k:
        raise ValueError(f"knn_graph needs N > k, got N={n}, k={k}")
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, np.inf)
    part = np.argpartition(d2, k, axis=1)[:, :k]
    pd = np.take_along_axis(d2, part, axis=1)
    order = np.argsort(pd, axis=1, kind="stable")
    indices = np.take_along_axis(part, order, axis=1)
    dists = np.sqrt(np.take_along_axis(pd, order, axis=1))
    return indices, dists


def _smooth_knn_dist(dists, k, n_iter=64):
    """Binary search per point for sigma with
    sum_j exp(-max(0, d_ij - rho_i) / sigma_i) = log2(k).
    """
    n = dists.shape[0]
    target = np.log2(k)
    rho = np.zeros(n)
    sigma = np.zeros(n)
    for i in range(n):
        row = dists[i]
        pos = row[row > 0.0]
        rho[i] = pos[0] if pos.size else 0.0
        lo, hi, mid = 0.0, np.inf, 1.0
        for _ in range(n_iter):
            val = np.exp(-np.maximum(row - rho[i], 0.0) / mid).sum()
            if abs(val - target) < SMOOTH_K_TOLERANCE:
                break
            if val > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        sigma[i] = mid
    return rho, sigma


def fuzzy_simplicial_set(indices, dists, k=None) -> FuzzyGraph:
    """Per-point exponential membership weights, symmetrized with the
    probabilistic t-conorm w + w' - w*w'.
    """
    indices = np.asarray(indices)
    dists = np.asarray(dists, dtype=np.float64)
    n, kk = indices.shape
    if k is None:
        k = kk
    rho, sigma = _smooth_knn_dist(dists, k)
    w = np.exp(-np.maximum(dists - rho[:, None], 0.0)
               / np.maximum(sigma[:, None], 1e-300))
    rows = np.repeat(np.arange(n), kk)
    graph = sp.coo_matrix((w.ravel(), (rows, indices.ravel())),
                          shape=(n, n)).tocsr()
    gt = graph.T.tocsr()
    sym = graph + gt - graph.multiply(gt)
    return FuzzyGraph(matrix=sym.tocsr(), rho=rho, sigma=sigma)


def fit_ab(min_dist, spread=1.0):
    """Least-squares fit of 1/(1 + a*x^(2b)) to the target membership curve
    over [0, 3*spread].
    """

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    xv = np.linspace(0.0, spread * 3.0, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


def spectral_init(graph: sp.csr_matrix, dim, seed, scale=10.0):
    """Eigenvectors of the symmetric normalized Laplacian; falls back to
    scaled uniform random coordinates on numerical failure.
    """
    n = graph.shape[0]
    rng = np.random.default_rng(seed)
    try:
        deg = np.asarray(graph.sum(axis=1)).ravel()
        if np.any(deg <= 0):
            raise np.linalg.LinAlgError("isolated vertex")
        dinv = 1.0 / np.sqrt(deg)
        lap = np.eye(n) - (graph.toarray() * dinv[:, None]) * dinv[None, :]
        vals, vecs = np.linalg.eigh(lap)
        emb = vecs[:, 1:dim + 1]
        if not np.all(np.isfinite(emb)):
            raise np.linalg.LinAlgError("non-finite eigenvectors")
        span = np.abs(emb).max()
        if span == 0.0:
            raise np.linalg.LinAlgError("degenerate eigenvectors")
        return np.ascontiguousarray(emb * (scale / span))
    except np.linalg.LinAlgError:
        return rng.uniform(-scale, scale, size=(n, dim))


def _make_epochs_per_sample(weights, n_epochs):
    result = -1.0 * np.ones(weights.shape[0])
    n_samples = n_epochs * (weights / weights.max())
    mask = n_samples > 0
    result[mask] = n_epochs / n_samples[mask]
    return result


@numba.njit(cache=True)
def _layout_kernel(emb, head, tail, epochs_per_sample, a, b,
                   n_epochs, lr0, neg_rate, seed):  # pragma: no cover
    np.random.seed(seed)
    n, dim = emb.shape
    n_edges = head.shape[0]
    epochs_per_neg = epochs_per_sample / neg_rate
    next_sample = epochs_per_sample.copy()
    next_neg = epochs_per_neg.copy()
    clip = 4.0
    for epoch in range(n_epochs):
        alpha = lr0 * (1.0 - epoch / n_epochs)
        for e in range(n_edges):
            if next_sample[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            d2 = 0.0
            for c in range(dim):
                diff = emb[i, c] - emb[j, c]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2 ** b + 1.0)
            else:
                coeff = 0.0
            for c in range(dim):
                g = coeff * (emb[i, c] - emb[j, c])
                if g > clip:
                    g = clip
                elif g < -clip:
                    g = -clip
                emb[i, c] += alpha * g
                emb[j, c] -= alpha * g
            next_sample[e] += epochs_per_sample[e]
            n_neg = int((epoch - next_neg[e]) / epochs_per_neg[e])
            for _ in range(n_neg):
                kidx = np.random.randint(0, n)
                if kidx == i:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = emb[i, c] - emb[kidx, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = (2.0 * b) / ((0.001 + d2) * (a * d2 ** b + 1.0))
                else:
                    coeff = 0.0
                for c in range(dim):
                    if coeff > 0.0:
                        g = coeff * (emb[i, c] - emb[kidx, c])
                    else:
                        g = clip
                    if g > clip:
                        g = clip
                    elif g < -clip:
                        g = -clip
                    emb[i, c] += alpha * g
            next_neg[e] += n_neg * epochs_per_neg[e]
    return emb


def optimize_layout(graph: FuzzyGraph, config: UmapConfig):
    """Force-directed layout with negative sampling; deterministic per seed."""
    mat = graph.matrix.tocoo()
    if mat.nnz == 0:
        raise ValueError("optimize_layout: empty fuzzy graph")
    a, b = config.a, config.b
    if a is None or b is None:
        a, b = fit_ab(config.min_dist)
    emb = spectral_init(graph.matrix, config.n_components, config.seed)
    weights = mat.data.copy()
    weights[weights < weights.max() / config.n_epochs] = 0.0
    keep = weights > 0.0
    head = mat.row[keep].astype(np.int64)
    tail = mat.col[keep].astype(np.int64)
    eps = _make_epochs_per_sample(weights[keep], config.n_epochs)
    emb = _layout_kernel(np.ascontiguousarray(emb, dtype=np.float64),
                         head, tail, eps, a, b,
                         config.n_epochs, config.learning_rate,
                         float(config.negative_sample_rate),
                         config.seed & 0x7FFFFFFF)
    if not np.all(np.isfinite(emb)):
        raise FloatingPointError("layout optimization produced non-finite values")
    return emb


def umap_fit(points, config: UmapConfig):
    """Full pipeline: k-NN -> fuzzy set -> layout.  Returns (embedding,
    FuzzyGraph).  n_neighbors is clamped to N - 1 for small inputs.
    """
    points = np.asarray(points, dtype=np.float64)
    k = min(config.n_neighbors, points.shape[0] - 1)
    if k < 1:
        raise ValueError("umap_fit needs at least 2 points")
    indices, dists = knn_graph(points, k)
    graph = fuzzy_simplicial_set(indices, dists, k)
    emb = optimize_layout(graph, config)
    return emb, graph
