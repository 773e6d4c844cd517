"""Point-set primitives: resampling, normalization, exact NN search, Chamfer distance.

A point cloud is an ``(n, 3)`` float64 array with ``n >= 1``. Row order carries
no meaning.
"""

import math

import numpy as np

from . import kernels


def as_cloud(points, name="point cloud"):
    """Validate and return ``points`` as a C-contiguous ``(n, 3)`` float64 array."""
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty point cloud")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def resample(cloud, m, rng):
    """Return exactly ``m`` points drawn from ``cloud``.

    Large clouds are subsampled without replacement. Small clouds keep every
    point and are padded with uniformly drawn duplicates.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or len(cloud) == 0:
        raise ValueError("empty point cloud")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = len(cloud)
    if n >= m:
        idx = rng.choice(n, size=m, replace=False)
    else:
        extra = rng.integers(0, n, size=m - n)
        idx = rng.permutation(np.concatenate([np.arange(n), extra]))
    return np.ascontiguousarray(cloud[idx])


def normalize_unit_sphere(cloud):
    """Center on the centroid and scale so the farthest point has norm 1."""
    cloud = as_cloud(cloud)
    centered = cloud - cloud.mean(axis=0)
    radius = np.sqrt((centered * centered).sum(axis=1)).max()
    scale = max(1.0, float(np.abs(cloud).max()))
    if radius <= 1e-12 * scale:
        return np.zeros_like(cloud)
    return centered / radius


class NnIndex:
    """Immutable k-d tree over one point cloud for exact nearest-neighbor queries.

    Ties are broken toward the lowest point index, so results agree exactly
    with a linear scan.
    """

    def __init__(self, cloud, leaf_size=8):
        self.points = as_cloud(cloud)
        self.points.setflags(write=False)
        self.leaf_size = max(1, int(leaf_size))
        perm = np.arange(len(self.points), dtype=np.int64)
        split_dim, split_val, left, right, start, stop = [], [], [], [], [], []

        def build(lo, hi):
            node = len(left)
            split_dim.append(0)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(lo)
            stop.append(hi)
            if hi - lo <= self.leaf_size:
                return node
            sub = self.points[perm[lo:hi]]
            spread = sub.max(axis=0) - sub.min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                return node
            order = np.argsort(sub[:, dim], kind="stable")
            perm[lo:hi] = perm[lo:hi][order]
            mid = (lo + hi) // 2
            split_dim[node] = dim
            # left points are <= split, right points are >= split
            split_val[node] = float(self.points[perm[mid], dim])
            left[node] = build(lo, mid)
            right[node] = build(mid, hi)
            return node

        build(0, len(self.points))
        self._perm = perm
        self._split_dim = np.asarray(split_dim, dtype=np.int64)
        self._split_val = np.asarray(split_val, dtype=np.float64)
        self._left = np.asarray(left, dtype=np.int64)
        self._right = np.asarray(right, dtype=np.int64)
        self._start = np.asarray(start, dtype=np.int64)
        self._stop = np.asarray(stop, dtype=np.int64)

    def __len__(self):
        return len(self.points)

    def query(self, queries):
        """Nearest stored point for each query row: ``(indices, distances)``."""
        q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        idx, d2 = kernels.kdtree_query(
            self.points, self._perm, self._split_dim, self._split_val,
            self._left, self._right, self._start, self._stop, q,
        )
        return idx, np.sqrt(d2)


def nearest(index, query):
    """Return ``(point_index, euclidean_distance)`` of the nearest stored point."""
    idx, dist = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3))
    return int(idx[0]), float(dist[0])


def nn_correspondence(P, Q):
    """For every row of ``P`` the index of and distance to its nearest row of ``Q``."""
    P = as_cloud(P)
    Q = as_cloud(Q)
    idx, d2 = kernels.nn_brute(P, Q)
    return idx, np.sqrt(d2)


def chamfer(P, Q, directed_max=False):
    """Symmetric Chamfer distance with unsquared Euclidean distances.

    The two directed average nearest-neighbor terms are summed. With
    ``directed_max=True`` the larger of the two is returned instead.
    """
    P = as_cloud(P)
    Q = as_cloud(Q)
    _, d_pq = nn_correspondence(P, Q)
    _, d_qp = nn_correspondence(Q, P)
    fwd = math.fsum(d_pq) / len(P)
    bwd = math.fsum(d_qp) / len(Q)
    if directed_max:
        return max(fwd, bwd)
    return fwd + bwd


def chamfer_grad(P, Q):
    """Gradient of ``chamfer(P, Q)`` with respect to the points of ``P``.

    Nearest-neighbor correspondences are held at their current assignment.
    Pairs at distance exactly zero contribute a zero subgradient.
    """
    P = as_cloud(P)
    Q = as_cloud(Q)
    return _chamfer_grad(P, Q)[0]


def _unit(diff, dist):
    safe = np.where(dist > 0.0, dist, 1.0)
    return np.where((dist > 0.0)[:, None], diff / safe[:, None], 0.0)


def _chamfer_grad(P, Q):
    # returns (grad wrt P, loss value, correspondences) for reuse in training
    if not (np.isfinite(P).all() and np.isfinite(Q).all()):
        # overflowed forward pass; let the caller's finiteness check report it
        return np.full(P.shape, np.nan), math.nan, (None, None)
    i_pq, d2_pq = kernels.nn_brute(P, Q)
    i_qp, d2_qp = kernels.nn_brute(Q, P)
    d_pq = np.sqrt(d2_pq)
    d_qp = np.sqrt(d2_qp)
    grad = _unit(P - Q[i_pq], d_pq) / len(P)
    back = _unit(P[i_qp] - Q, d_qp) / len(Q)
    for c in range(3):
        grad[:, c] += np.bincount(i_qp, weights=back[:, c], minlength=len(P))
    loss = math.fsum(d_pq) / len(P) + math.fsum(d_qp) / len(Q)
    return grad, loss, (i_pq, i_qp)
