"""Brute-force reference implementations used by the tests.

Deliberately plain Python loops over floats; no shared code with the package
kernels beyond the arithmetic itself.
"""

import itertools
import math

import numpy as np


def _cols(X):
    X = np.asarray(X, dtype=float)
    return [[float(X[i, j]) for i in range(X.shape[0])] for j in range(X.shape[1])]


def _seq_sum(values):
    acc = 0.0
    for v in values:
        acc += v
    return acc


def mean_rows(rows):
    rows = [np.asarray(r, dtype=float) for r in rows]
    return np.array([_seq_sum(float(r[j]) for r in rows) / len(rows)
                     for j in range(rows[0].size)])


def coord_median(X):
    out = []
    for col in _cols(X):
        s = sorted(col)
        m = len(s)
        out.append(s[m // 2] if m % 2 else (s[m // 2 - 1] + s[m // 2]) / 2)
    return np.array(out)


def trimmed_mean(X, trim):
    out = []
    for col in _cols(X):
        s = sorted(col)[trim:len(col) - trim]
        out.append(_seq_sum(s) / len(s))
    return np.array(out)


def sq_dist(a, b):
    return _seq_sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def krum_scores(X, f):
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    scores = []
    for i in range(m):
        d = sorted(sq_dist(X[i], X[j]) for j in range(m) if j != i)
        scores.append(_seq_sum(d[:m - f - 2]))
    return np.array(scores)


def krum_index(X, f, ids=None):
    s = krum_scores(X, f)
    ids = list(range(len(s))) if ids is None else list(ids)
    return min(range(len(s)), key=lambda i: (s[i], ids[i]))


def norm(row):
    return math.sqrt(_seq_sum(float(v) * float(v) for v in row))


def median_norm(X):
    n = sorted(norm(r) for r in np.asarray(X, dtype=float))
    m = len(n)
    return n[m // 2] if m % 2 else (n[m // 2 - 1] + n[m // 2]) / 2


def clip_mean(X, cap):
    X = np.asarray(X, dtype=float)
    rows = []
    for r in X:
        nr = norm(r)
        s = cap / nr if nr > cap else 1.0
        rows.append([float(v) * s for v in r])
    return mean_rows(rows)


def sign_mean(X, step):
    out = []
    for col in _cols(X):
        tot = _seq_sum(float((v > 0) - (v < 0)) for v in col)
        out.append(step * (tot / len(col)))
    return np.array(out)


def sum_dist(z, X):
    return sum(math.dist(z, r) for r in np.asarray(X, dtype=float))


def grid_min_objective(X, n):
    """Smallest sum of distances over an ``n`` x ``n`` grid spanning the points' bounding box."""
    X = np.asarray(X, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    gx = np.linspace(lo[0], hi[0], n)
    gy = np.linspace(lo[1], hi[1], n)
    GX, GY = np.meshgrid(gx, gy, indexing="ij")
    total = np.zeros_like(GX)
    for x, y in X:
        total += np.hypot(GX - x, GY - y)
    return float(total.min())


def predict(params, spec, x):
    """Forward pass written with explicit matrix products per layer."""
    layers = params.layers()
    h = np.asarray(x, dtype=float)
    depth = len(spec.hidden_layers) + 1
    for i in range(depth):
        h = h @ layers[f"W{i}"] + layers[f"b{i}"]
        if i < depth - 1:
            h = np.maximum(h, 0.0)
    return [int(np.argmax(row)) for row in h]


def accuracy(params, spec, ds):
    p = predict(params, spec, ds.features)
    return sum(int(a == b) for a, b in zip(p, ds.labels)) / len(p)


def vba_labels(params, deltas, spec, aux, threshold):
    base = accuracy(params, spec, aux)
    out = []
    for d in deltas:
        drop = base - accuracy(params + d, spec, aux)
        out.append("B" if drop <= threshold + 1e-12 else "P")
    return out


def subsets(M, K):
    return list(itertools.combinations(range(M), K))
