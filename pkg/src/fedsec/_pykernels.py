"""numpy implementations of the aggregation kernels, used when the compiled
extension is unavailable (or ``FEDSEC_PURE_PYTHON=1``).

Reductions along the update axis accumulate row by row, matching the
compiled kernels; vector norms use numpy's pairwise summation and may differ
from them in the last ulp.
"""

import numpy as np


def coord_median(X):
    return np.median(X, axis=0)


def trimmed_mean(X, trim):
    m = X.shape[0]
    kept = np.sort(X, axis=0)[trim:m - trim]
    return kept.sum(axis=0) / (m - 2 * trim)


def column_mean(X):
    return X.sum(axis=0) / X.shape[0]


def pairwise_sq_dists(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("abk,abk->ab", diff, diff)


def krum_scores(X, f):
    m = X.shape[0]
    D = pairwise_sq_dists(X)
    # drop the diagonal, then keep the m - f - 2 nearest peers
    off = D[~np.eye(m, dtype=bool)].reshape(m, m - 1)
    return np.sort(off, axis=1)[:, :m - f - 2].sum(axis=1)


def row_norms(X):
    return np.sqrt(np.einsum("ij,ij->i", X, X))


def clip_mean(X, cap):
    norms = row_norms(X)
    scale = np.where(norms > cap, cap / np.where(norms > 0, norms, 1.0), 1.0)
    return (X * scale[:, None]).sum(axis=0) / X.shape[0]


def sign_mean(X, step):
    return step * (np.sign(X).sum(axis=0) / X.shape[0])


def weiszfeld(X, tol, max_iter, eps):
    z = column_mean(X)
    objectives = []
    it = 0
    converged = False
    while it < max_iter:
        d = np.sqrt(((X - z) ** 2).sum(axis=1))
        objectives.append(float(d.sum()))
        w = 1.0 / np.maximum(d, eps)
        znew = (w[:, None] * X).sum(axis=0) / w.sum()
        step = float(np.sqrt(((znew - z) ** 2).sum()))
        z = znew
        it += 1
        if step < tol:
            converged = True
            break
    objectives.append(float(np.sqrt(((X - z) ** 2).sum(axis=1)).sum()))
    return z, it, converged, np.asarray(objectives)


def max_cosine(u, H):
    nu = np.linalg.norm(u)
    if nu == 0 or H.shape[0] == 0:
        return -np.inf
    nh = np.linalg.norm(H, axis=1)
    ok = nh > 0
    if not ok.any():
        return -np.inf
    return float(np.max((H[ok] @ u) / (nh[ok] * nu)))
