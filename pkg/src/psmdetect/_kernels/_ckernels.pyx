# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Behaviour mirrors ``_pyfallback`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double TAU = 1e-12


cdef inline Py_ssize_t _find(const cnp.int64_t[::1] query, cnp.int64_t code) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = query.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if query[mid] < code:
            lo = mid + 1
        else:
            hi = mid
    if lo < query.shape[0] and query[lo] == code:
        return lo
    return -1


def pair_counts(offsets, uid, times, viral, tracked, query, cnp.int64_t n_users):
    cdef const cnp.int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const cnp.int64_t[::1] u = np.ascontiguousarray(uid, dtype=np.int64)
    cdef const cnp.int64_t[::1] t = np.ascontiguousarray(times, dtype=np.int64)
    cdef const cnp.uint8_t[::1] vir = np.ascontiguousarray(viral, dtype=np.uint8)
    cdef const cnp.uint8_t[::1] trk = np.ascontiguousarray(tracked, dtype=np.uint8)
    cdef const cnp.int64_t[::1] q = np.ascontiguousarray(query, dtype=np.int64)
    count_arr = np.zeros(q.shape[0], dtype=np.int64)
    vcount_arr = np.zeros(q.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] count = count_arr
    cdef cnp.int64_t[::1] vcount = vcount_arr
    cdef cnp.int64_t[::1] buf_u = np.empty(max(u.shape[0], 1), dtype=np.int64)
    cdef cnp.int64_t[::1] buf_t = np.empty(max(u.shape[0], 1), dtype=np.int64)
    cdef Py_ssize_t c, a, b, k, n, p, r
    cdef bint is_viral
    if q.shape[0] == 0:
        return count_arr, vcount_arr
    with nogil:
        for c in range(off.shape[0] - 1):
            n = 0
            for k in range(off[c], off[c + 1]):
                if trk[u[k]]:
                    buf_u[n] = u[k]
                    buf_t[n] = t[k]
                    n += 1
            if n < 2:
                continue
            is_viral = vir[c] != 0
            for a in range(n):
                for b in range(n):
                    if buf_t[a] < buf_t[b]:
                        p = _find(q, buf_u[a] * n_users + buf_u[b])
                        if p >= 0:
                            count[p] += 1
                            if is_viral:
                                vcount[p] += 1
    return count_arr, vcount_arr


def smo_solve(Q, y, double C, double tol, Py_ssize_t max_iter, beta0=None, bint record=False):
    cdef double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yy.shape[0]
    beta_arr = np.zeros(n) if beta0 is None else np.array(beta0, dtype=np.float64)
    grad_arr = np.asarray(Q, dtype=np.float64) @ beta_arr - 1.0
    cdef double[::1] beta = beta_arr
    cdef double[::1] grad = grad_arr
    cdef double[::1] qd = np.ascontiguousarray(np.diag(np.asarray(Q, dtype=np.float64)))
    history = [] if record else None
    cdef Py_ssize_t it = 0, k, i, j
    cdef double gap = np.inf, gmax, gmax2, score, grad_diff, quad, obj_diff, obj_min
    cdef double old_i, old_j, bi, bj, quad_coef, delta, diff, total, di, dj
    cdef bint in_up, in_low, any_low
    while True:
        i = -1
        gmax = -np.inf
        gmax2 = -np.inf
        any_low = False
        for k in range(n):
            score = -yy[k] * grad[k]
            if yy[k] > 0:
                in_up = beta[k] < C
                in_low = beta[k] > 0
            else:
                in_up = beta[k] > 0
                in_low = beta[k] < C
            if in_up and score >= gmax:
                gmax = score
                i = k
            if in_low:
                any_low = True
                if -score > gmax2:
                    gmax2 = -score
        if i < 0 or not any_low:
            gap = 0.0
            break
        gap = gmax + gmax2
        if gap <= tol:
            break
        j = -1
        obj_min = np.inf
        for k in range(n):
            if yy[k] > 0:
                in_low = beta[k] > 0
            else:
                in_low = beta[k] < C
            if not in_low:
                continue
            grad_diff = gmax + yy[k] * grad[k]
            if grad_diff > 0:
                quad = qd[i] + qd[k] - 2.0 * yy[i] * yy[k] * q[i, k]
                if not quad > 0:
                    quad = TAU
                obj_diff = -(grad_diff * grad_diff) / quad
                if obj_diff <= obj_min:
                    obj_min = obj_diff
                    j = k
        if j < 0:
            break
        if it >= max_iter:
            return beta_arr, grad_arr, it, gap, False, history
        it += 1

        old_i = beta[i]
        old_j = beta[j]
        if yy[i] != yy[j]:
            quad_coef = qd[i] + qd[j] + 2.0 * q[i, j]
            if quad_coef <= 0:
                quad_coef = TAU
            delta = (-grad[i] - grad[j]) / quad_coef
            diff = old_i - old_j
            bi = old_i + delta
            bj = old_j + delta
            if diff > 0:
                if bj < 0:
                    bj = 0.0
                    bi = diff
            else:
                if bi < 0:
                    bi = 0.0
                    bj = -diff
            if diff > 0:
                if bi > C:
                    bi = C
                    bj = C - diff
            else:
                if bj > C:
                    bj = C
                    bi = C + diff
        else:
            quad_coef = qd[i] + qd[j] - 2.0 * q[i, j]
            if quad_coef <= 0:
                quad_coef = TAU
            delta = (grad[i] - grad[j]) / quad_coef
            total = old_i + old_j
            bi = old_i - delta
            bj = old_j + delta
            if total > C:
                if bi > C:
                    bi = C
                    bj = total - C
            else:
                if bj < 0:
                    bj = 0.0
                    bi = total
            if total > C:
                if bj > C:
                    bj = C
                    bi = total - C
            else:
                if bi < 0:
                    bi = 0.0
                    bj = total
        beta[i] = bi
        beta[j] = bj
        di = bi - old_i
        dj = bj - old_j
        for k in range(n):
            grad[k] += q[i, k] * di + q[j, k] * dj
        if record:
            history.append(0.5 * float(beta_arr @ grad_arr) - 0.5 * float(beta_arr.sum()))
    return beta_arr, grad_arr, it, max(gap, 0.0), True, history
