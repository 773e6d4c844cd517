"""Pure-Python/numpy versions of the compiled kernels.

Every function here must produce bit-identical results to its counterpart in
``_ckernels.pyx``; the floating-point operations are written in the same order.
"""

import numpy as np

_BLOCK = 256


def nn_brute(P, Q):
    n = P.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    for s in range(0, n, _BLOCK):
        blk = P[s:s + _BLOCK]
        dx = blk[:, 0, None] - Q[None, :, 0]
        dy = blk[:, 1, None] - Q[None, :, 1]
        dz = blk[:, 2, None] - Q[None, :, 2]
        d = (dx * dx + dy * dy) + dz * dz
        j = np.argmin(d, axis=1)
        idx[s:s + _BLOCK] = j
        d2[s:s + _BLOCK] = d[np.arange(len(blk)), j]
    return idx, d2


def kdtree_query(points, perm, split_dim, split_val, left, right, start, stop, queries):
    nq = queries.shape[0]
    idx = np.empty(nq, dtype=np.int64)
    out = np.empty(nq, dtype=np.float64)
    pts = points.tolist()
    for qi in range(nq):
        q = queries[qi].tolist()
        best = float("inf")
        bi = -1
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound > best:
                continue
            if left[node] < 0:
                for k in range(start[node], stop[node]):
                    pi = int(perm[k])
                    p = pts[pi]
                    dx = q[0] - p[0]
                    dy = q[1] - p[1]
                    dz = q[2] - p[2]
                    d2 = (dx * dx + dy * dy) + dz * dz
                    if d2 < best or (d2 == best and pi < bi):
                        best = d2
                        bi = pi
                continue
            qd = q[split_dim[node]]
            sv = float(split_val[node])
            if qd < sv:
                near, far, diff = left[node], right[node], sv - qd
            else:
                near, far, diff = right[node], left[node], qd - sv
            stack.append((int(far), diff * diff))
            stack.append((int(near), 0.0))
        idx[qi] = bi
        out[qi] = best
    return idx, out


def chaos_iterate(A, b, choices, burn_in):
    maps = [(A[c].tolist(), b[c].tolist()) for c in range(A.shape[0])]
    total = len(choices)
    out = np.empty((total - burn_in, 3), dtype=np.float64)
    x0 = x1 = x2 = 0.0
    rows = []
    for t, c in enumerate(choices.tolist()):
        (a0, a1, a2), bb = maps[c]
        y0 = ((a0[0] * x0 + a0[1] * x1) + a0[2] * x2) + bb[0]
        y1 = ((a1[0] * x0 + a1[1] * x1) + a1[2] * x2) + bb[1]
        y2 = ((a2[0] * x0 + a2[1] * x1) + a2[2] * x2) + bb[2]
        x0, x1, x2 = y0, y1, y2
        if t >= burn_in:
            rows.append((x0, x1, x2))
    if rows:
        out[:] = rows
    return out


def smo_solve(K, C, alpha, G, tol, max_iter):
    it = 0
    gap = float("inf")
    while it < max_iter:
        up = alpha < C
        low = alpha > 0.0
        if not up.any() or not low.any():
            gap = -float("inf")
            break
        i = int(np.argmin(np.where(up, G, np.inf)))
        j = int(np.argmax(np.where(low, G, -np.inf)))
        gap = G[j] - G[i]
        if gap < tol:
            break
        quad = (K[i, i] + K[j, j]) - 2.0 * K[i, j]
        if quad < 1e-12:
            quad = 1e-12
        delta = (G[j] - G[i]) / quad
        room = C - alpha[i]
        if delta >= room:
            delta = room
        if delta >= alpha[j]:
            delta = alpha[j]
        if delta == room:
            alpha[i] = C
        else:
            alpha[i] = alpha[i] + delta
        alpha[j] = alpha[j] - delta
        G += delta * (K[i] - K[j])
        it += 1
    return it, gap
