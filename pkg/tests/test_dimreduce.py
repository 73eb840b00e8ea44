import numpy as np
import pytest

from actcluster import dimreduce as dr
from actcluster.clustering import kmeans
from actcluster.metrics import align_labels, contingency


# ---------------------------------------------------------------------------
# knn graph
# ---------------------------------------------------------------------------

def test_knn_collinear_middle_point():
    pts = np.array([[0.0], [1.0], [3.0]])
    indices, dists = dr.knn_graph(pts, 1)
    assert indices[1, 0] == 0
    np.testing.assert_allclose(dists[1, 0], 1.0)


def test_knn_matches_bruteforce_oracle():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(100, 4))
    k = 7
    indices, dists = dr.knn_graph(pts, k)
    full = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    np.fill_diagonal(full, np.inf)
    for i in range(100):
        expect = set(np.argsort(full[i])[:k])
        assert set(indices[i]) == expect
        np.testing.assert_allclose(np.sort(dists[i]),
                                   np.sort(full[i][indices[i]]), atol=1e-10)


def test_knn_identical_points_ok():
    pts = np.zeros((10, 3))
    indices, dists = dr.knn_graph(pts, 3)
    np.testing.assert_allclose(dists, 0.0)
    assert np.all(indices != np.arange(10)[:, None])


def test_knn_rejects_k_ge_n():
    with pytest.raises(ValueError, match="N > k"):
        dr.knn_graph(np.zeros((3, 2)), 3)


# ---------------------------------------------------------------------------
# fuzzy simplicial set
# ---------------------------------------------------------------------------

def test_equidistant_neighbors_equal_weights():
    # regular simplex: every pairwise distance identical
    pts = np.eye(5)
    indices, dists = dr.knn_graph(pts, 4)
    graph = dr.fuzzy_simplicial_set(indices, dists)
    m = graph.matrix.toarray()
    off = m[~np.eye(5, dtype=bool)]
    np.testing.assert_allclose(off, off[0], atol=1e-9)


def test_symmetrization_exact():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(60, 3))
    indices, dists = dr.knn_graph(pts, 10)
    graph = dr.fuzzy_simplicial_set(indices, dists)
    m = graph.matrix
    diff = (m - m.T).toarray()
    assert np.abs(diff).max() == 0.0
    data = m.data
    assert data.min() > 0.0
    assert data.max() <= 1.0 + 1e-12


def test_sigma_search_residual():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(80, 5))
    k = 15
    indices, dists = dr.knn_graph(pts, k)
    graph = dr.fuzzy_simplicial_set(indices, dists, k)
    target = np.log2(k)
    for i in range(80):
        val = np.exp(-np.maximum(dists[i] - graph.rho[i], 0.0)
                     / graph.sigma[i]).sum()
        assert abs(val - target) < 1e-5


# ---------------------------------------------------------------------------
# curve fit
# ---------------------------------------------------------------------------

def test_fit_ab_reproduces_target_curve():
    a, b = dr.fit_ab(0.0)
    x = np.linspace(0.01, 3.0, 50)
    target = np.exp(-x)
    fitted = 1.0 / (1.0 + a * x ** (2.0 * b))
    assert np.abs(fitted - target).max() < 0.15
    # larger min_dist flattens the head of the curve, pushing b up
    a2, b2 = dr.fit_ab(0.5)
    assert b2 > b


# ---------------------------------------------------------------------------
# layout / full fit
# ---------------------------------------------------------------------------

def _blobs(n_per, sep, rng, dim=5):
    a = rng.normal(size=(n_per, dim))
    b = rng.normal(size=(n_per, dim))
    b[:, 0] += sep
    pts = np.vstack([a, b])
    labels = np.repeat([0, 1], n_per)
    return pts, labels


def _cluster_acc(emb, labels, seed=0):
    pred, _ = kmeans(emb, 2, n_init=5, seed=seed)
    table = contingency(labels, pred)
    perm = align_labels(table)
    return (perm[pred] == labels).mean()


def test_two_blobs_recovered():
    rng = np.random.default_rng(3)
    pts, labels = _blobs(100, 10.0, rng)
    config = dr.UmapConfig(n_neighbors=15, seed=0)
    emb, _ = dr.umap_fit(pts, config)
    assert emb.shape == (200, 2)
    assert _cluster_acc(emb, labels) >= 0.99


def test_blob_recovery_property_multiple_trials():
    for trial in range(5):
        rng = np.random.default_rng(100 + trial)
        pts, labels = _blobs(60, 12.0, rng, dim=4)
        config = dr.UmapConfig(n_neighbors=12, seed=trial)
        emb, _ = dr.umap_fit(pts, config)
        assert _cluster_acc(emb, labels, seed=trial) >= 0.99


def test_duplicated_point_no_nan():
    pts = np.tile(np.array([[1.0, 2.0, 3.0]]), (50, 1))
    config = dr.UmapConfig(n_neighbors=10, seed=0, n_epochs=50)
    emb, _ = dr.umap_fit(pts, config)
    assert np.all(np.isfinite(emb))


def test_same_seed_identical_bytes():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(80, 4))
    config = dr.UmapConfig(n_neighbors=10, seed=7, n_epochs=60)
    emb1, _ = dr.umap_fit(pts, config)
    emb2, _ = dr.umap_fit(pts, config)
    assert emb1.tobytes() == emb2.tobytes()


def test_umap_rejects_tiny_input():
    with pytest.raises(ValueError, match="at least 2"):
        dr.umap_fit(np.zeros((1, 3)), dr.UmapConfig())


def test_neighbors_clamped_for_small_n():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(20, 3))
    emb, graph = dr.umap_fit(pts, dr.UmapConfig(n_neighbors=60, n_epochs=30))
    assert emb.shape == (20, 2)
    assert np.all(np.isfinite(emb))


def test_spectral_init_fallback_on_empty_graph():
    import scipy.sparse as sp
    graph = sp.csr_matrix((5, 5))
    emb = dr.spectral_init(graph, 2, seed=0)
    assert emb.shape == (5, 2)
    assert np.all(np.abs(emb) <= 10.0)
