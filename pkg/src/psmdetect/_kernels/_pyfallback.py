"""Pure numpy implementations of the hot kernels.

Signatures and results match :mod:`psmdetect._kernels._ckernels` exactly;
integer outputs are identical and float outputs follow the same update
order.
"""

import numpy as np

TAU = 1e-12


def pair_counts(offsets, uid, times, viral, tracked, query, n_users):
    """Count, for every query pair code ``i * n_users + j``, the cascades in
    which ``i`` acts strictly before ``j`` and how many of those are viral.

    Only users with ``tracked[user]`` set are enumerated; every user that
    appears in ``query`` must be tracked. ``query`` must be sorted.
    """
    query = np.asarray(query, dtype=np.int64)
    count = np.zeros(len(query), dtype=np.int64)
    vcount = np.zeros(len(query), dtype=np.int64)
    if len(query) == 0:
        return count, vcount
    chunks, vchunks = [], []
    for c in range(len(offsets) - 1):
        a, b = offsets[c], offsets[c + 1]
        u = uid[a:b]
        keep = tracked[u]
        if keep.sum() < 2:
            continue
        u = u[keep]
        t = times[a:b][keep]
        before = t[:, None] < t[None, :]
        codes = (u[:, None] * n_users + u[None, :])[before]
        chunks.append(codes)
        if viral[c]:
            vchunks.append(codes)
    for out, parts in ((count, chunks), (vcount, vchunks)):
        if not parts:
            continue
        codes = np.concatenate(parts)
        pos = np.searchsorted(query, codes)
        pos[pos == len(query)] = 0
        hit = query[pos] == codes
        out += np.bincount(pos[hit], minlength=len(query))
    return count, vcount


def _objective(beta, grad):
    # 0.5 b'Qb - e'b with grad = Qb - e
    return 0.5 * float(beta @ grad) - 0.5 * float(beta.sum())


def smo_solve(Q, y, C, tol, max_iter, beta0=None, record=False):
    """Minimise ``0.5 b'Qb - sum(b)`` s.t. ``y'b = 0``, ``0 <= b <= C`` by
    SMO with second-order working-set selection.

    Returns ``(beta, grad, n_iter, gap, converged, history)``; ``history``
    holds the minimised objective after each update when ``record`` is set.
    """
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    beta = np.zeros(n) if beta0 is None else np.array(beta0, dtype=np.float64)
    grad = Q @ beta - 1.0
    qd = np.diag(Q).copy()
    history = [] if record else None
    pos = y > 0
    it = 0
    gap = np.inf
    while True:
        upper = beta >= C
        lower = beta <= 0
        # I_up: (y=+1, b<C) or (y=-1, b>0); score -y*G
        score = -y * grad
        in_up = np.where(pos, ~upper, ~lower)
        in_low = np.where(pos, ~lower, ~upper)
        if not in_up.any() or not in_low.any():
            gap = 0.0
            break
        cand = np.flatnonzero(in_up)
        i = cand[len(cand) - 1 - np.argmax(score[cand][::-1])]
        gmax = score[i]
        low = np.flatnonzero(in_low)
        gmax2 = np.max(-score[low])
        gap = gmax + gmax2
        if gap <= tol:
            break
        grad_diff = gmax - score[low]
        ok = grad_diff > 0
        if not ok.any():
            break
        low = low[ok]
        grad_diff = grad_diff[ok]
        quad = qd[i] + qd[low] - 2.0 * y[i] * y[low] * Q[i, low]
        quad = np.where(quad > 0, quad, TAU)
        obj_diff = -(grad_diff * grad_diff) / quad
        # last minimum wins, as with a "<=" scan
        j = low[len(low) - 1 - np.argmin(obj_diff[::-1])]
        if it >= max_iter:
            return beta, grad, it, gap, False, history
        it += 1

        old_i, old_j = beta[i], beta[j]
        if y[i] != y[j]:
            quad_coef = qd[i] + qd[j] + 2.0 * Q[i, j]
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
            quad_coef = qd[i] + qd[j] - 2.0 * Q[i, j]
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
        grad += Q[i] * (bi - old_i) + Q[j] * (bj - old_j)
        if record:
            history.append(_objective(beta, grad))
    return beta, grad, it, max(gap, 0.0), True, history
