"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and in-place semantics match the Cython module exactly.
"""

import numpy as np
from scipy.spatial.distance import cdist


def softplus_neg(s):
    """``-ln(sigmoid(s))`` evaluated without overflow."""
    s = np.asarray(s, dtype=np.float64)
    return np.logaddexp(0.0, -s)


def mf_triplet_grad(U, V, users, pos, neg, coef, scale, gU, gV):
    """Accumulate ``scale * sum_t coef_t * l(s_t)`` gradients into gU, gV.

    ``s_t = U[u].(V[i] - V[j])``. Returns the weighted loss sum (unscaled).
    """
    Uu = U[users]
    diff = V[pos] - V[neg]
    s = np.einsum("td,td->t", Uu, diff)
    loss = float(np.dot(coef, softplus_neg(s)))
    g = -scale * coef / (1.0 + np.exp(np.clip(s, -700.0, 700.0)))
    np.add.at(gU, users, g[:, None] * diff)
    gv = g[:, None] * Uu
    np.add.at(gV, pos, gv)
    np.add.at(gV, neg, -gv)
    return loss


def rmsprop_update(param, grad, acc, lr, decay, eps):
    acc *= decay
    acc += (1.0 - decay) * grad * grad
    param -= lr * grad / np.sqrt(acc + eps)


def cluster_distance_sums(X, labels, n_clusters):
    """Row ``p`` holds the summed Euclidean distance from point p to each cluster.

    Points with label -1 are skipped as targets but still get a row.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    out = np.zeros((n, n_clusters))
    keep = labels >= 0
    onehot = np.zeros((n, n_clusters))
    onehot[np.nonzero(keep)[0], labels[keep]] = 1.0
    chunk = max(1, 4_000_000 // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        out[start:stop] = cdist(X[start:stop], X) @ onehot
    return out
