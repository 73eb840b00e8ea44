"""Latent-space clustering backends: k-means, full-covariance GMM with EM,
and a Gaussian-emission HMM whose transition matrix is fixed from the
label self-transition rate.  All fits record their log-likelihood history
so monotonicity is checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

RIDGE = 1e-6


@dataclass
class GmmModel:
    weights: np.ndarray          # (K,)
    means: np.ndarray            # (K, D)
    covs: np.ndarray             # (K, D, D)
    log_likelihoods: list = field(default_factory=list)  # mean LL per EM step
    converged: bool = False

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


@dataclass
class HmmModel:
    means: np.ndarray            # (K, D)
    covs: np.ndarray             # (K, D, D)
    transitions: np.ndarray      # (K, K), fixed
    initial: np.ndarray          # (K,), uniform
    log_likelihoods: list = field(default_factory=list)  # mean LL per EM step

    @property
    def n_states(self) -> int:
        return self.means.shape[0]


@dataclass
class ClusterAssignment:
    labels: np.ndarray           # (N,) hard labels c(x)
    confidence: np.ndarray       # (N,) posterior of the assigned label
    posteriors: np.ndarray       # (N, K)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _kmeans_pp(points, K, rng):
    n = points.shape[0]
    centers = np.empty((K, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            centers[k] = points[rng.integers(n)]
        else:
            centers[k] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[k]) ** 2).sum(axis=1))
    return centers


def _lloyd(points, centers, max_iter=300):
    K = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for k in range(K):
            members = new_labels == k
            if not members.any():
                # empty cluster: split the largest by stealing its farthest point
                big = np.bincount(new_labels, minlength=K).argmax()
                far = np.flatnonzero(new_labels == big)[
                    d2[new_labels == big, big].argmax()]
                centers[k] = points[far]
                new_labels[far] = k
                members = new_labels == k
            centers[k] = points[members].mean(axis=0)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    inertia = d2[np.arange(points.shape[0]), labels].sum()
    return labels, centers, inertia


def kmeans(points, K, n_init=10, seed=0):
    """Lloyd's algorithm with k-means++ seeding; best inertia of n_init runs."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < K:
        raise ValueError(f"kmeans needs N >= K, got N={n}, K={K}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers = _kmeans_pp(points, K, rng)
        labels, centers, inertia = _lloyd(points, centers)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best[0], best[1]


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------

def _safe_cholesky(cov):
    """Cholesky with ridge regularization on failure; never aborts."""
    ridge = 0.0
    for _ in range(12):
        try:
            return np.linalg.cholesky(cov + ridge * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            ridge = RIDGE if ridge == 0.0 else ridge * 10.0
    raise np.linalg.LinAlgError("covariance unrecoverably singular")


def log_gaussian(points, mean, cov):
    """Log density of N(mean, cov) at each row of points."""
    d = points.shape[1]
    chol = _safe_cholesky(cov)
    diff = points - mean[None, :]
    y = np.linalg.solve(chol, diff.T).T
    maha = (y * y).sum(axis=1)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))


def _log_emissions(points, means, covs):
    K = means.shape[0]
    out = np.empty((points.shape[0], K))
    for k in range(K):
        out[:, k] = log_gaussian(points, means[k], covs[k])
    return out


def gmm_responsibilities(points, means, covs, weights):
    """Posterior component probabilities; rows sum to 1."""
    logb = _log_emissions(np.asarray(points, dtype=np.float64), means, covs)
    logw = np.log(np.maximum(weights, 1e-300))
    logpost = logb + logw[None, :]
    logpost -= logsumexp(logpost, axis=1, keepdims=True)
    return np.exp(logpost)


def _mstep_gaussians(points, resp):
    """Weighted means and full covariances; ridge keeps covs positive
    definite."""
    nk = resp.sum(axis=0)
    nk = np.maximum(nk, 1e-12)
    means = (resp.T @ points) / nk[:, None]
    K, d = means.shape
    covs = np.empty((K, d, d))
    for k in range(K):
        diff = points - means[k]
        covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
        covs[k] += RIDGE * np.eye(d)
    return nk, means, covs


# ---------------------------------------------------------------------------
# GMM EM
# ---------------------------------------------------------------------------

def gmm_fit(points, K, tol=1e-3, max_steps=100, n_init=5, seed=0) -> GmmModel:
    """EM on full covariances, best of n_init k-means-initialized runs by
    final log-likelihood.  Stops when the mean log-likelihood improves by
    less than tol.
    """
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    if n < K:
        raise ValueError(f"gmm_fit needs N >= K, got N={n}, K={K}")
    best = None
    for init in range(n_init):
        labels, _ = kmeans(points, K, n_init=1, seed=seed * 1000 + init)
        resp = np.zeros((n, K))
        resp[np.arange(n), labels] = 1.0
        nk, means, covs = _mstep_gaussians(points, resp)
        weights = nk / n
        history = []
        converged = False
        for _ in range(max_steps):
            logb = _log_emissions(points, means, covs)
            logjoint = logb + np.log(np.maximum(weights, 1e-300))[None, :]
            lse = logsumexp(logjoint, axis=1)
            ll = lse.mean()
            resp = np.exp(logjoint - lse[:, None])
            if history and ll - history[-1] < tol:
                history.append(ll)
                converged = True
                break
            history.append(ll)
            nk, means, covs = _mstep_gaussians(points, resp)
            weights = nk / n
        model = GmmModel(weights=weights, means=means, covs=covs,
                         log_likelihoods=history, converged=converged)
        if best is None or history[-1] > best.log_likelihoods[-1]:
            best = model
    return best


def gmm_assign(model: GmmModel, points) -> ClusterAssignment:
    post = gmm_responsibilities(points, model.means, model.covs, model.weights)
    labels = post.argmax(axis=1)
    return ClusterAssignment(labels=labels,
                             confidence=post[np.arange(post.shape[0]), labels],
                             posteriors=post)


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

def estimate_self_transition(labels=None, override=None):
    """Fraction of consecutive pairs with the same label, or the override."""
    if override is not None:
        return float(override)
    labels = np.asarray(labels)
    if labels.size < 2:
        raise ValueError("estimate_self_transition needs >= 2 labels or an "
                         "override")
    return float(np.mean(labels[1:] == labels[:-1]))


def build_transitions(K, p_self, semantics="self"):
    """Constant-diagonal transition matrix with rows summing to exactly 1.

    semantics='self' puts p_self on the diagonal (p = self-transition
    fraction); 'complement' puts 1 - p_self on the diagonal with
    p_self/(K-1) off-diagonal, as literally printed.
    """
    if K < 2:
        raise ValueError(f"build_transitions needs K >= 2, got {K}")
    if not 0.0 < p_self < 1.0:
        raise ValueError(f"p_self must be in (0, 1), got {p_self}")
    if semantics == "self":
        diag = p_self
        off = (1.0 - p_self) / (K - 1)
    elif semantics == "complement":
        diag = 1.0 - p_self
        off = p_self / (K - 1)
    else:
        raise ValueError(f"unknown transition semantics {semantics!r}")
    A = np.full((K, K), off)
    np.fill_diagonal(A, diag)
    # nudge the diagonal so each row sums to 1 exactly under np.sum
    for i in range(K):
        for _ in range(5):
            r = A[i].sum()
            if r == 1.0:
                break
            A[i, i] += 1.0 - r
    return A


def clamp_probability(p, eps=1e-6):
    return float(np.clip(p, eps, 1.0 - eps))


# ---------------------------------------------------------------------------
# HMM with fixed transitions
# ---------------------------------------------------------------------------

def forward_backward(logb, transitions, initial):
    """Scaled forward-backward for one chain.

    logb: (T, K) log emission densities.  Returns (gamma [T, K],
    log_likelihood).
    """
    T, K = logb.shape
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    alpha = np.empty((T, K))
    scale = np.empty(T)
    alpha[0] = initial * b[0]
    scale[0] = alpha[0].sum()
    alpha[0] /= scale[0]
    for t in range(1, T):
        alpha[t] = (alpha[t - 1] @ transitions) * b[t]
        scale[t] = alpha[t].sum()
        alpha[t] /= scale[t]
    beta = np.empty((T, K))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (transitions @ (b[t + 1] * beta[t + 1])) / scale[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    loglik = float(np.log(scale).sum() + shift.sum())
    return gamma, loglik


def hmm_fit_and_decode(points, chains, K, transitions, seed=0,
                       n_iter=10, tol=1e-3, gmm_n_init=5):
    """Emission-only EM with fixed transitions; returns (HmmModel,
    ClusterAssignment).

    chains: list of index arrays giving temporally contiguous runs of
    points; forward-backward runs independently per chain.  Emissions are
    initialized from a GMM fit; only means/covariances are re-estimated.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if chains is None:
        chains = [np.arange(n)]
    covered = np.concatenate(chains)
    if covered.size != n or not np.array_equal(np.sort(covered), np.arange(n)):
        raise ValueError("chains must partition the points exactly")
    init_gmm = gmm_fit(points, K, n_init=gmm_n_init, seed=seed)
    means = init_gmm.means.copy()
    covs = init_gmm.covs.copy()
    initial = np.full(K, 1.0 / K)
    history = []
    gamma = np.empty((n, K))
    for _ in range(n_iter):
        total_ll = 0.0
        logb = _log_emissions(points, means, covs)
        for chain in chains:
            g, ll = forward_backward(logb[chain], transitions, initial)
            gamma[chain] = g
            total_ll += ll
        mean_ll = total_ll / n
        if history and mean_ll - history[-1] < tol:
            history.append(mean_ll)
            break
        history.append(mean_ll)
        _, means, covs = _mstep_gaussians(points, gamma)
    labels = gamma.argmax(axis=1)
    model = HmmModel(means=means, covs=covs, transitions=transitions,
                     initial=initial, log_likelihoods=history)
    assignment = ClusterAssignment(
        labels=labels,
        confidence=gamma[np.arange(n), labels],
        posteriors=gamma.copy())
    return model, assignment
