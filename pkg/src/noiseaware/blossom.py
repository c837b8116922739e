"""Maximum-weight matching on dense graphs (Edmonds' blossom, O(n^3)), compiled.

Array-based primal-dual implementation with integer weights. Vertices are
1-indexed; ``w[u, v] > 0`` marks an edge. Blossom ids live above ``n``.
All mutable state is carried in a tuple so every helper compiles with numba.
"""

from __future__ import annotations

import numba
import numpy as np

_INF = np.int64(1) << np.int64(62)

# State tuple layout:
# (gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen, ffrom, q, sc)
# sc = [n, n_x, lca stamp, queue head, queue tail]


@numba.njit(cache=True, inline="always")
def _dist(T, a, b):
    gu, gv, gw, lab = T[0], T[1], T[2], T[3]
    return lab[gu[a, b]] + lab[gv[a, b]] - 2 * gw[a, b]


@numba.njit(cache=True, inline="always")
def _update_slack(T, u, x):
    slack = T[5]
    if slack[x] == 0 or _dist(T, u, x) < _dist(T, slack[x], x):
        slack[x] = u


@numba.njit(cache=True, inline="always")
def _set_slack(T, x):
    gw, slack, st, S, sc = T[2], T[5], T[6], T[8], T[14]
    slack[x] = 0
    for u in range(1, sc[0] + 1):
        if gw[u, x] > 0 and st[u] != x and S[st[u]] == 0:
            _update_slack(T, u, x)


@numba.njit(cache=True)
def _q_push(T, x):
    flower, flen, q, sc = T[10], T[11], T[13], T[14]
    if x <= sc[0]:
        q[sc[4]] = x
        sc[4] += 1
        return 0
    for i in range(flen[x]):
        _q_push(T, flower[x, i])
    return 0


@numba.njit(cache=True)
def _set_st(T, x, b):
    st, flower, flen, sc = T[6], T[10], T[11], T[14]
    st[x] = b
    if x > sc[0]:
        for i in range(flen[x]):
            _set_st(T, flower[x, i], b)
    return 0


@numba.njit(cache=True)
def _get_pr(T, b, xr):
    flower, flen = T[10], T[11]
    m = flen[b]
    pr = 0
    while flower[b, pr] != xr:
        pr += 1
    if pr % 2 == 1:
        lo, hi = 1, m - 1
        while lo < hi:
            tmp = flower[b, lo]
            flower[b, lo] = flower[b, hi]
            flower[b, hi] = tmp
            lo += 1
            hi -= 1
        return m - pr
    return pr


@numba.njit(cache=True)
def _set_match(T, u, v):
    gu, gv, match, flower, flen, ffrom, sc = T[0], T[1], T[4], T[10], T[11], T[12], T[14]
    match[u] = gv[u, v]
    if u > sc[0]:
        xr = ffrom[u, gu[u, v]]
        pr = _get_pr(T, u, xr)
        for i in range(pr):
            _set_match(T, flower[u, i], flower[u, i ^ 1])
        _set_match(T, xr, v)
        m = flen[u]
        rotated = np.empty(m, dtype=flower.dtype)
        for i in range(m):
            rotated[i] = flower[u, (i + pr) % m]
        flower[u, :m] = rotated
    return 0


@numba.njit(cache=True)
def _augment(T, u, v):
    match, st, pa = T[4], T[6], T[7]
    while True:
        xnv = st[match[u]]
        _set_match(T, u, v)
        if xnv == 0:
            return
        _set_match(T, xnv, st[pa[xnv]])
        u = st[pa[xnv]]
        v = xnv


@numba.njit(cache=True, inline="always")
def _get_lca(T, u, v):
    match, st, pa, vis, sc = T[4], T[6], T[7], T[9], T[14]
    sc[2] += 1
    t = sc[2]
    while u != 0 or v != 0:
        if u != 0:
            if vis[u] == t:
                return u
            vis[u] = t
            u = st[match[u]]
            if u != 0:
                u = st[pa[u]]
        u, v = v, u
    return 0


@numba.njit(cache=True)
def _add_blossom(T, u, lca, v):
    gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen, ffrom, q, sc = T
    n = sc[0]
    b = n + 1
    while b <= sc[1] and st[b] != 0:
        b += 1
    if b > sc[1]:
        sc[1] += 1
    lab[b] = 0
    S[b] = 0
    match[b] = match[lca]
    m = 0
    flower[b, m] = lca
    m += 1
    x = u
    while x != lca:
        flower[b, m] = x
        y = st[match[x]]
        flower[b, m + 1] = y
        m += 2
        _q_push(T, y)
        x = st[pa[y]]
    lo, hi = 1, m - 1
    while lo < hi:
        tmp = flower[b, lo]
        flower[b, lo] = flower[b, hi]
        flower[b, hi] = tmp
        lo += 1
        hi -= 1
    x = v
    while x != lca:
        flower[b, m] = x
        y = st[match[x]]
        flower[b, m + 1] = y
        m += 2
        _q_push(T, y)
        x = st[pa[y]]
    flen[b] = m
    _set_st(T, b, b)
    for x in range(1, sc[1] + 1):
        gw[b, x] = 0
        gw[x, b] = 0
    for x in range(1, n + 1):
        ffrom[b, x] = 0
    for i in range(m):
        xs = flower[b, i]
        for x in range(1, sc[1] + 1):
            if gw[b, x] == 0 or _dist(T, xs, x) < _dist(T, b, x):
                gu[b, x] = gu[xs, x]
                gv[b, x] = gv[xs, x]
                gw[b, x] = gw[xs, x]
                gu[x, b] = gu[x, xs]
                gv[x, b] = gv[x, xs]
                gw[x, b] = gw[x, xs]
        for x in range(1, n + 1):
            if ffrom[xs, x] != 0:
                ffrom[b, x] = xs
    _set_slack(T, b)


@numba.njit(cache=True)
def _expand_blossom(T, b):
    gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen, ffrom, q, sc = T
    for i in range(flen[b]):
        _set_st(T, flower[b, i], flower[b, i])
    xr = ffrom[b, gu[b, pa[b]]]
    pr = _get_pr(T, b, xr)
    for i in range(0, pr, 2):
        xs = flower[b, i]
        xns = flower[b, i + 1]
        pa[xs] = gu[xns, xs]
        S[xs] = 1
        S[xns] = 0
        slack[xs] = 0
        _set_slack(T, xns)
        _q_push(T, xns)
    S[xr] = 1
    pa[xr] = pa[b]
    for i in range(pr + 1, flen[b]):
        xs = flower[b, i]
        S[xs] = -1
        _set_slack(T, xs)
    st[b] = 0


@numba.njit(cache=True, inline="always")
def _on_found_edge(T, eu, ev):
    match, slack, st, pa, S = T[4], T[5], T[6], T[7], T[8]
    u = st[eu]
    v = st[ev]
    if S[v] == -1:
        pa[v] = eu
        S[v] = 1
        nu = st[match[v]]
        slack[v] = 0
        slack[nu] = 0
        S[nu] = 0
        _q_push(T, nu)
    elif S[v] == 0:
        lca = _get_lca(T, u, v)
        if lca == 0:
            _augment(T, u, v)
            _augment(T, v, u)
            return True
        _add_blossom(T, u, lca, v)
    return False


@numba.njit(cache=True)
def _stage(T):
    gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen, ffrom, q, sc = T
    n = sc[0]
    for x in range(1, sc[1] + 1):
        S[x] = -1
        slack[x] = 0
    sc[3] = 0
    sc[4] = 0
    for x in range(1, sc[1] + 1):
        if st[x] == x and match[x] == 0:
            pa[x] = 0
            S[x] = 0
            _q_push(T, x)
    if sc[4] == 0:
        return False
    while True:
        while sc[3] < sc[4]:
            u = q[sc[3]]
            sc[3] += 1
            if S[st[u]] == 1:
                continue
            for v in range(1, n + 1):
                if gw[u, v] > 0 and st[u] != st[v]:
                    if _dist(T, u, v) == 0:
                        if _on_found_edge(T, gu[u, v], gv[u, v]):
                            return True
                    else:
                        _update_slack(T, u, st[v])
        d = _INF
        for b in range(n + 1, sc[1] + 1):
            if st[b] == b and S[b] == 1:
                d = min(d, lab[b] // 2)
        for x in range(1, sc[1] + 1):
            if st[x] == x and slack[x] != 0:
                if S[x] == -1:
                    d = min(d, _dist(T, slack[x], x))
                elif S[x] == 0:
                    d = min(d, _dist(T, slack[x], x) // 2)
        for u in range(1, n + 1):
            if S[st[u]] == 0:
                if lab[u] <= d:
                    return False
                lab[u] -= d
            elif S[st[u]] == 1:
                lab[u] += d
        for b in range(n + 1, sc[1] + 1):
            if st[b] == b:
                if S[st[b]] == 0:
                    lab[b] += 2 * d
                elif S[st[b]] == 1:
                    lab[b] -= 2 * d
        sc[3] = 0
        sc[4] = 0
        for x in range(1, sc[1] + 1):
            if st[x] == x and slack[x] != 0 and st[slack[x]] != x and _dist(T, slack[x], x) == 0:
                if _on_found_edge(T, gu[slack[x], x], gv[slack[x], x]):
                    return True
        for b in range(n + 1, sc[1] + 1):
            if st[b] == b and S[b] == 1 and lab[b] == 0:
                _expand_blossom(T, b)
    return False


@numba.njit(cache=True)
def max_weight_matching(weights):
    """Maximum-weight matching of a dense symmetric int64 weight matrix.

    ``weights[u, v] > 0`` is an edge (0-indexed input). Returns ``mate`` with
    ``mate[u] = v`` or ``-1`` for unmatched vertices.
    """
    n = weights.shape[0]
    N = 2 * n + 2
    gu = np.zeros((N, N), dtype=np.int64)
    gv = np.zeros((N, N), dtype=np.int64)
    gw = np.zeros((N, N), dtype=np.int64)
    for u in range(1, n + 1):
        for v in range(1, n + 1):
            gu[u, v] = u
            gv[u, v] = v
            gw[u, v] = weights[u - 1, v - 1]
    lab = np.zeros(N, dtype=np.int64)
    match = np.zeros(N, dtype=np.int64)
    slack = np.zeros(N, dtype=np.int64)
    st = np.zeros(N, dtype=np.int64)
    pa = np.zeros(N, dtype=np.int64)
    S = np.zeros(N, dtype=np.int64)
    vis = np.zeros(N, dtype=np.int64)
    flower = np.zeros((N, N), dtype=np.int64)
    flen = np.zeros(N, dtype=np.int64)
    ffrom = np.zeros((N, n + 1), dtype=np.int64)
    q = np.zeros(4 * N * N, dtype=np.int64)
    sc = np.zeros(5, dtype=np.int64)
    sc[0] = n
    sc[1] = n
    for u in range(N):
        st[u] = u
    w_max = 0
    for u in range(1, n + 1):
        ffrom[u, u] = u
        for v in range(1, n + 1):
            w_max = max(w_max, gw[u, v])
    for u in range(1, n + 1):
        lab[u] = w_max
    T = (gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen, ffrom, q, sc)
    while _stage(T):
        pass
    mate = np.full(n, -1, dtype=np.int64)
    for u in range(1, n + 1):
        if match[u] != 0:
            mate[u - 1] = match[u] - 1
    return mate
