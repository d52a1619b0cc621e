"""Compiled inner loops for split search, routing and forest accumulation.

Array conventions (coordinate-major so a split scan reads contiguous memory)
-----------------
``X0``    (p, n)    baseline transformed covariates
``Xe``    (p, n)    transformed covariates at each subject's own ``Y_i``
``Xg``    (p, q*n)  grid-time transformed covariates, column ``k*n + i``
``Kw``    (n, q)    ``K_h(t'_k - Y_i) * Delta_i``
``w``     (n,)      subject weights (bootstrap counts or 0/1)

Node membership is carried as three index arrays: baseline members,
event members (``Delta_i = 1``) and at-risk grid cells ``k*n + i``.
"""

import numpy as np
from numba import njit

MAX_THRESHOLDS = 64


@njit(cache=True)
def candidate_thresholds(vals, max_thr):
    """Midpoints of consecutive distinct values, thinned evenly to ``max_thr``."""
    v = np.sort(vals)
    m = v.size
    uniq = np.empty(m)
    u = 0
    for i in range(m):
        if u == 0 or v[i] != uniq[u - 1]:
            uniq[u] = v[i]
            u += 1
    if u < 2:
        return np.empty(0)
    mids = np.empty(u - 1)
    for i in range(u - 1):
        mids[i] = 0.5 * (uniq[i] + uniq[i + 1])
    nm = u - 1
    if nm <= max_thr:
        return mids
    out = np.empty(max_thr)
    for j in range(max_thr):
        out[j] = mids[int(np.floor(j * (nm - 1) / (max_thr - 1) + 0.5))]
    return out


LUT_SIZE = 1024


@njit(cache=True)
def _lut(thr):
    """``lut[u]`` counts thresholds below ``u / LUT_SIZE``; values live in ``[0, 1]``."""
    lut = np.empty(LUT_SIZE + 1, np.int64)
    j = 0
    for u in range(LUT_SIZE + 1):
        edge = u / LUT_SIZE
        while j < thr.size and thr[j] < edge:
            j += 1
        lut[u] = j
    return lut


@njit(cache=True)
def _bin(thr, lut, x):
    """Number of thresholds strictly below ``x``."""
    u = int(x * LUT_SIZE)
    if u < 0:
        u = 0
    elif u > LUT_SIZE:
        u = LUT_SIZE
    b = lut[u]
    # the bucket edge may sit above x by rounding; step back, then forward
    while b > 0 and thr[b - 1] >= x:
        b -= 1
    while b < thr.size and thr[b] < x:
        b += 1
    return b


@njit(cache=True)
def coord_stats(c, base_idx, ev_idx, grid_idx, n, X0, Xe, Xg, w, Kw, max_thr):
    """Left-child baseline counts, event mass and risk mass for every threshold on coordinate ``c``.

    Returns ``thr, nL, fL, SL, nP, fP, SP``; ``fL``/``SL`` have shape (q, J)
    and are unnormalized weighted sums.
    """
    q = Kw.shape[1]
    x0 = X0[c]
    xe = Xe[c]
    xg = Xg[c]
    vals = np.empty(base_idx.size)
    for a in range(base_idx.size):
        vals[a] = x0[base_idx[a]]
    thr = candidate_thresholds(vals, max_thr)
    J = thr.size
    nbin = J + 1
    lut = _lut(thr)
    hn = np.zeros(nbin)
    nP = 0.0
    for a in range(base_idx.size):
        i = base_idx[a]
        hn[_bin(thr, lut, x0[i])] += w[i]
        nP += w[i]
    hf = np.zeros((nbin, q))
    for a in range(ev_idx.size):
        i = ev_idx[a]
        b = _bin(thr, lut, xe[i])
        wi = w[i]
        for k in range(q):
            hf[b, k] += wi * Kw[i, k]
    hS = np.zeros((nbin, q))
    for a in range(grid_idx.size):
        g = grid_idx[a]
        k = g // n
        hS[_bin(thr, lut, xg[g]), k] += w[g - k * n]
    nL = np.empty(J)
    fL = np.empty((q, J))
    SL = np.empty((q, J))
    fP = np.empty(q)
    SP = np.empty(q)
    acc = 0.0
    for j in range(J):
        acc += hn[j]
        nL[j] = acc
    for k in range(q):
        af = 0.0
        aS = 0.0
        for j in range(J):
            af += hf[j, k]
            aS += hS[j, k]
            fL[k, j] = af
            SL[k, j] = aS
        fP[k] = af + hf[J, k]
        SP[k] = aS + hS[J, k]
    return thr, nL, fL, SL, nP, fP, SP


@njit(cache=True)
def delta_scores(nL, fL, SL, nP, fP, SP, omega, half_min):
    """Within-node ICON increment per threshold; ``-1`` marks inadmissible splits."""
    q, J = fL.shape
    out = np.empty(J)
    for j in range(J):
        if nL[j] < half_min or nP - nL[j] < half_min:
            out[j] = -1.0
            continue
        s = 0.0
        for k in range(q):
            den = fP[k] * SP[k]
            if den > 0.0:
                fR = fP[k] - fL[k, j]
                SR = SP[k] - SL[k, j]
                s += omega[k] * abs(fL[k, j] * SR - fR * SL[k, j]) / den
        out[j] = s
    return out


@njit(cache=True)
def best_split_delta(coords, base_idx, ev_idx, grid_idx, n, X0, Xe, Xg, w, Kw, omega, half_min, max_thr):
    """Best (coordinate, threshold, score) over ``coords`` by within-node ICON increment.

    Coordinates are scanned in the given order and thresholds ascending; a
    candidate replaces the incumbent only on a strictly larger score.
    """
    best_c = -1
    best_t = 0.0
    best_s = -1.0
    for ci in range(coords.size):
        c = coords[ci]
        thr, nL, fL, SL, nP, fP, SP = coord_stats(c, base_idx, ev_idx, grid_idx, n, X0, Xe, Xg, w, Kw, max_thr)
        if thr.size == 0:
            continue
        sc = delta_scores(nL, fL, SL, nP, fP, SP, omega, half_min)
        for j in range(thr.size):
            if sc[j] >= 0.0 and sc[j] > best_s:
                best_s = sc[j]
                best_c = c
                best_t = thr[j]
    return best_c, best_t, best_s


@njit(cache=True)
def route(points, feature, threshold, left, right):
    """Leaf node id for each row of ``points``; left child takes ``x <= threshold``."""
    m = points.shape[0]
    out = np.empty(m, np.int64)
    for a in range(m):
        node = 0
        while left[node] >= 0:
            if points[a, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[a] = node
    return out


@njit(cache=True)
def at_risk_leaf_counts(ev_Y, ev_anchor, Y, desc_order, leaf_grid, w, n_leaves):
    """``N[e, l] = sum_j w_j I(Y_j >= ev_Y[e], leaf_grid[ev_anchor[e], j] == l)``.

    Events must be sorted by decreasing ``ev_Y`` and ``desc_order`` lists all
    subjects by decreasing ``Y``.  Counts are swept once per anchor block.
    """
    ne = ev_Y.size
    n = desc_order.size
    N = np.zeros((ne, n_leaves))
    cnt = np.zeros(n_leaves)
    ptr = 0
    curk = -1
    for e in range(ne):
        k = ev_anchor[e]
        if k != curk:
            cnt[:] = 0.0
            ptr = 0
            curk = k
        while ptr < n and Y[desc_order[ptr]] >= ev_Y[e]:
            j = desc_order[ptr]
            cnt[leaf_grid[k, j]] += w[j]
            ptr += 1
        N[e, :] = cnt
    return N


@njit(cache=True)
def accumulate_survival_terms(v2, v3, new_leaf, ev_anchor, ev_leaf, ev_weight, N):
    """Add one tree's contribution to the event-time numerators and denominators.

    ``new_leaf`` (m, q) holds leaf positions of new subjects at each grid
    time; ``ev_leaf[e]`` is the leaf of event subject ``e`` at its own time.
    """
    m = new_leaf.shape[0]
    ne = ev_anchor.size
    for a in range(m):
        for e in range(ne):
            l = new_leaf[a, ev_anchor[e]]
            if ev_leaf[e] == l:
                v2[a, e] += ev_weight[e]
            v3[a, e] += N[e, l]
