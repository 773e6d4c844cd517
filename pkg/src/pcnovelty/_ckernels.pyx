# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Arithmetic order mirrors ``_pykernels`` exactly."""

import numpy as np

from libc.math cimport INFINITY


def nn_brute(const double[:, ::1] P, const double[:, ::1] Q):
    cdef Py_ssize_t n = P.shape[0], m = Q.shape[0], i, j
    cdef double px, py, pz, dx, dy, dz, d2, best
    cdef Py_ssize_t bi
    idx_arr = np.empty(n, dtype=np.int64)
    d2_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] out = d2_arr
    with nogil:
        for i in range(n):
            px = P[i, 0]
            py = P[i, 1]
            pz = P[i, 2]
            best = INFINITY
            bi = -1
            for j in range(m):
                dx = px - Q[j, 0]
                dy = py - Q[j, 1]
                dz = pz - Q[j, 2]
                d2 = (dx * dx + dy * dy) + dz * dz
                if d2 < best:
                    best = d2
                    bi = j
            idx[i] = bi
            out[i] = best
    return idx_arr, d2_arr


def kdtree_query(const double[:, ::1] points, const long long[::1] perm,
                 const long long[::1] split_dim, const double[::1] split_val,
                 const long long[::1] left, const long long[::1] right,
                 const long long[::1] start, const long long[::1] stop,
                 const double[:, ::1] queries):
    cdef Py_ssize_t nq = queries.shape[0], qi, s, node, k, pi
    cdef Py_ssize_t n_nodes = left.shape[0]
    cdef double qx, qy, qz, dx, dy, dz, d2, best, diff, qd
    cdef long long bi
    cdef long long near, far
    idx_arr = np.empty(nq, dtype=np.int64)
    d2_arr = np.empty(nq, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] out = d2_arr
    # stack entries: node id and lower bound on squared distance
    stack_nodes_arr = np.empty(2 * n_nodes + 2, dtype=np.int64)
    stack_bound_arr = np.empty(2 * n_nodes + 2, dtype=np.float64)
    cdef long long[::1] stack_nodes = stack_nodes_arr
    cdef double[::1] stack_bound = stack_bound_arr
    with nogil:
        for qi in range(nq):
            qx = queries[qi, 0]
            qy = queries[qi, 1]
            qz = queries[qi, 2]
            best = INFINITY
            bi = -1
            s = 0
            stack_nodes[0] = 0
            stack_bound[0] = 0.0
            s = 1
            while s > 0:
                s -= 1
                node = stack_nodes[s]
                if stack_bound[s] > best:
                    continue
                if left[node] < 0:
                    for k in range(start[node], stop[node]):
                        pi = perm[k]
                        dx = qx - points[pi, 0]
                        dy = qy - points[pi, 1]
                        dz = qz - points[pi, 2]
                        d2 = (dx * dx + dy * dy) + dz * dz
                        if d2 < best or (d2 == best and pi < bi):
                            best = d2
                            bi = pi
                    continue
                if split_dim[node] == 0:
                    qd = qx
                elif split_dim[node] == 1:
                    qd = qy
                else:
                    qd = qz
                if qd < split_val[node]:
                    near = left[node]
                    far = right[node]
                    diff = split_val[node] - qd
                else:
                    near = right[node]
                    far = left[node]
                    diff = qd - split_val[node]
                # far pushed first so near is popped first
                stack_nodes[s] = far
                stack_bound[s] = diff * diff
                s += 1
                stack_nodes[s] = near
                stack_bound[s] = 0.0
                s += 1
            idx[qi] = bi
            out[qi] = best
    return idx_arr, d2_arr


def chaos_iterate(const double[:, :, ::1] A, const double[:, ::1] b,
                  const long long[::1] choices, Py_ssize_t burn_in):
    cdef Py_ssize_t total = choices.shape[0], t, r
    cdef double x0 = 0.0, x1 = 0.0, x2 = 0.0, y0, y1, y2
    cdef long long c
    out_arr = np.empty((total - burn_in, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for t in range(total):
            c = choices[t]
            y0 = ((A[c, 0, 0] * x0 + A[c, 0, 1] * x1) + A[c, 0, 2] * x2) + b[c, 0]
            y1 = ((A[c, 1, 0] * x0 + A[c, 1, 1] * x1) + A[c, 1, 2] * x2) + b[c, 1]
            y2 = ((A[c, 2, 0] * x0 + A[c, 2, 1] * x1) + A[c, 2, 2] * x2) + b[c, 2]
            x0 = y0
            x1 = y1
            x2 = y2
            if t >= burn_in:
                r = t - burn_in
                out[r, 0] = x0
                out[r, 1] = x1
                out[r, 2] = x2
    return out_arr


def smo_solve(const double[:, ::1] K, double C, double[::1] alpha, double[::1] G,
              double tol, long long max_iter):
    cdef Py_ssize_t n = alpha.shape[0], k, i, j
    cdef long long it = 0
    cdef double gmin, gmax, gap = INFINITY, quad, delta, room
    with nogil:
        while it < max_iter:
            i = -1
            j = -1
            gmin = INFINITY
            gmax = -INFINITY
            for k in range(n):
                if alpha[k] < C and G[k] < gmin:
                    gmin = G[k]
                    i = k
                if alpha[k] > 0.0 and G[k] > gmax:
                    gmax = G[k]
                    j = k
            gap = gmax - gmin
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
            for k in range(n):
                G[k] = G[k] + delta * (K[i, k] - K[j, k])
            it += 1
    return it, gap
