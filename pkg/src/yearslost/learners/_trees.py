"""Compiled tree builders for the forest learners.

Trees are stored flat: node arrays shared by all trees of a forest, with
``left == -1`` marking a leaf. Survival leaves point into an entry table of
``(grid index, Nelson-Aalen increment)`` pairs; regression leaves carry a
value. Bootstrap resampling enters as per-row integer counts, and rows are
visited in an order fixed by their contents (``order``), so a tree depends
on the multiset of resampled rows and never on how the input was ordered.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _choose_features(d, mtry):
    perm = np.arange(d)
    for k in range(mtry):
        j = np.random.randint(k, d)
        tmp = perm[k]
        perm[k] = perm[j]
        perm[j] = tmp
    return perm[:mtry]


@njit(cache=True)
def _candidate_thresholds(rows, start, end, X, f, nsplit):
    """Sorted cut points for variable ``f``; a row goes left when ``x <= cut``.

    With ``nsplit > 0`` the cuts are the values of ``nsplit`` randomly drawn
    node rows, otherwise every distinct value but the largest.
    """
    if nsplit > 0:
        out = np.empty(nsplit)
        for s in range(nsplit):
            out[s] = X[rows[np.random.randint(start, end)], f]
        return np.sort(out)
    vals = np.empty(end - start)
    for i in range(start, end):
        vals[i - start] = X[rows[i], f]
    uniq = np.unique(vals)
    return uniq[:-1]


@njit(cache=True)
def _bins(rows, start, end, X, f, cands, out):
    # out[i] = number of cut points strictly below x, so the row goes left
    # for cut k exactly when out[i] <= k
    for i in range(start, end):
        out[i] = np.searchsorted(cands, X[rows[i], f], side="left")


@njit(cache=True)
def _best_logrank(rows, start, end, X, f, cands, trank, ev, cnt, W, min_leaf, binbuf):
    """Largest log-rank statistic over the sorted cut points ``cands``."""
    c = cands.shape[0]
    _bins(rows, start, end, X, f, cands, binbuf)
    ybin = np.zeros(c + 1)
    dbin = np.zeros(c + 1)
    num = np.zeros(c)
    var = np.zeros(c)
    Y = 0.0
    # rows[start:end] sorted by time; scan from the latest time backwards
    i = end - 1
    while i >= start:
        r = trank[rows[i]]
        d = 0.0
        j = i
        while j >= start and trank[rows[j]] == r:
            row = rows[j]
            b = binbuf[j]
            ybin[b] += cnt[row]
            Y += cnt[row]
            if ev[row]:
                dbin[b] += cnt[row]
                d += cnt[row]
            j -= 1
        if d > 0:
            YL = 0.0
            dL = 0.0
            for k in range(c):
                YL += ybin[k]
                dL += dbin[k]
                num[k] += dL - YL * d / Y
                if Y > 1:
                    var[k] += (YL / Y) * (1.0 - YL / Y) * ((Y - d) / (Y - 1.0)) * d
            for k in range(c + 1):
                dbin[k] = 0.0
        i = j
    best = -1.0
    bt = 0.0
    WL = 0.0
    for k in range(c):
        WL += ybin[k]
        if WL < min_leaf or W - WL < min_leaf or var[k] <= 0:
            continue
        stat = num[k] * num[k] / var[k]
        if stat > best:
            best = stat
            bt = cands[k]
    return best, bt


@njit(cache=True)
def _best_variance(rows, start, end, X, f, cands, y, cnt, W, S, min_leaf, binbuf):
    """Largest weighted between-child sum of squares over the sorted cut points."""
    c = cands.shape[0]
    _bins(rows, start, end, X, f, cands, binbuf)
    wbin = np.zeros(c + 1)
    sbin = np.zeros(c + 1)
    for i in range(start, end):
        row = rows[i]
        wbin[binbuf[i]] += cnt[row]
        sbin[binbuf[i]] += cnt[row] * y[row]
    base = S * S / W
    best = 0.0
    bt = 0.0
    WL = 0.0
    SL = 0.0
    for k in range(c):
        WL += wbin[k]
        SL += sbin[k]
        WR = W - WL
        if WL < min_leaf or WR < min_leaf:
            continue
        SR = S - SL
        gain = SL * SL / WL + SR * SR / WR - base
        if gain > best:
            best = gain
            bt = cands[k]
    return best, bt


@njit(cache=True)
def _partition(rows, buf, start, end, X, f, thr):
    nl = 0
    for i in range(start, end):
        if X[rows[i], f] <= thr:
            buf[nl] = rows[i]
            nl += 1
    nr = nl
    for i in range(start, end):
        if X[rows[i], f] > thr:
            buf[nr] = rows[i]
            nr += 1
    for i in range(end - start):
        rows[start + i] = buf[i]
    return start + nl


@njit(cache=True)
def build_survival_forest(X, trank, ev, gidx, G, order, counts, seeds, mtry, min_leaf, nsplit):
    T, n = counts.shape
    d = X.shape[1]
    max_nodes = T * (2 * n + 1)
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    estart = np.zeros(max_nodes, np.int64)
    elen = np.zeros(max_nodes, np.int64)
    mort = np.zeros(max_nodes)
    egi = np.empty(T * n, np.int64)
    einc = np.empty(T * n)
    tree_off = np.zeros(T + 1, np.int64)
    nn = 0
    ne = 0
    rows = np.empty(n, np.int64)
    buf = np.empty(n, np.int64)
    binbuf = np.empty(n, np.int64)
    st_s = np.empty(2 * n + 1, np.int64)
    st_e = np.empty(2 * n + 1, np.int64)
    st_node = np.empty(2 * n + 1, np.int64)
    for t in range(T):
        np.random.seed(seeds[t])
        cnt = counts[t]
        nr = 0
        for k in range(n):
            if cnt[order[k]] > 0:
                rows[nr] = order[k]
                nr += 1
        tree_off[t] = nn
        root = nn
        nn += 1
        sp = 0
        st_s[sp] = 0
        st_e[sp] = nr
        st_node[sp] = root
        sp += 1
        while sp > 0:
            sp -= 1
            s0 = st_s[sp]
            e0 = st_e[sp]
            node = st_node[sp]
            W = 0.0
            E = 0.0
            for i in range(s0, e0):
                W += cnt[rows[i]]
                if ev[rows[i]]:
                    E += cnt[rows[i]]
            best = -1.0
            bf = -1
            bt = 0.0
            if W >= 2 * min_leaf and E > 0:
                fs = _choose_features(d, mtry)
                for fi in range(fs.shape[0]):
                    f = fs[fi]
                    cands = _candidate_thresholds(rows, s0, e0, X, f, nsplit)
                    if cands.shape[0] == 0:
                        continue
                    stat, c = _best_logrank(rows, s0, e0, X, f, cands, trank, ev, cnt, W,
                                            min_leaf, binbuf)
                    if stat > best:
                        best = stat
                        bf = f
                        bt = c
            if bf >= 0:
                mid = _partition(rows, buf, s0, e0, X, bf, bt)
                feat[node] = bf
                thr[node] = bt
                left[node] = nn
                right[node] = nn + 1
                st_s[sp] = mid
                st_e[sp] = e0
                st_node[sp] = nn + 1
                sp += 1
                st_s[sp] = s0
                st_e[sp] = mid
                st_node[sp] = nn
                sp += 1
                nn += 2
            else:
                # Nelson-Aalen on the leaf, forward in time
                estart[node] = ne
                Y = W
                i = s0
                m = 0.0
                while i < e0:
                    r = trank[rows[i]]
                    dd = 0.0
                    cc = 0.0
                    while i < e0 and trank[rows[i]] == r:
                        cc += cnt[rows[i]]
                        if ev[rows[i]]:
                            dd += cnt[rows[i]]
                        i += 1
                    if dd > 0:
                        g = gidx[r]
                        egi[ne] = g
                        einc[ne] = dd / Y
                        m += (dd / Y) * (G - g)
                        ne += 1
                    Y -= cc
                elen[node] = ne - estart[node]
                mort[node] = m
    tree_off[T] = nn
    return (feat[:nn], thr[:nn], left[:nn], right[:nn], estart[:nn], elen[:nn], mort[:nn],
            egi[:ne], einc[:ne], tree_off)


@njit(cache=True)
def _leaf(x, node, feat, thr, left, right):
    while left[node] != -1:
        if x[feat[node]] <= thr[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True)
def predict_survival_forest(Xq, feat, thr, left, right, estart, elen, egi, einc, tree_off, G):
    T = tree_off.shape[0] - 1
    m = Xq.shape[0]
    out = np.zeros((m, G))
    for t in range(T):
        root = tree_off[t]
        for i in range(m):
            leaf = _leaf(Xq[i], root, feat, thr, left, right)
            for e in range(estart[leaf], estart[leaf] + elen[leaf]):
                out[i, egi[e]] += einc[e]
    return out / T


@njit(cache=True)
def oob_mortality(X, counts, feat, thr, left, right, mort, tree_off):
    T, n = counts.shape
    tot = np.zeros(n)
    k = np.zeros(n)
    for t in range(T):
        root = tree_off[t]
        for i in range(n):
            if counts[t, i] == 0:
                leaf = _leaf(X[i], root, feat, thr, left, right)
                tot[i] += mort[leaf]
                k[i] += 1
    out = np.full(n, np.nan)
    for i in range(n):
        if k[i] > 0:
            out[i] = tot[i] / k[i]
    return out


@njit(cache=True)
def harrell_concordance(time, ev, risk):
    num = 0.0
    den = 0.0
    n = time.shape[0]
    for i in range(n):
        if not ev[i] or np.isnan(risk[i]):
            continue
        for j in range(n):
            if time[j] > time[i] and not np.isnan(risk[j]):
                den += 1
                if risk[i] > risk[j]:
                    num += 1
                elif risk[i] == risk[j]:
                    num += 0.5
    if den == 0:
        return np.nan
    return num / den


@njit(cache=True)
def build_regression_forest(X, y, order, counts, seeds, mtry, min_leaf, nsplit):
    T, n = counts.shape
    d = X.shape[1]
    max_nodes = T * (2 * n + 1)
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    tree_off = np.zeros(T + 1, np.int64)
    nn = 0
    rows = np.empty(n, np.int64)
    buf = np.empty(n, np.int64)
    binbuf = np.empty(n, np.int64)
    st_s = np.empty(2 * n + 1, np.int64)
    st_e = np.empty(2 * n + 1, np.int64)
    st_node = np.empty(2 * n + 1, np.int64)
    for t in range(T):
        np.random.seed(seeds[t])
        cnt = counts[t]
        nr = 0
        for k in range(n):
            if cnt[order[k]] > 0:
                rows[nr] = order[k]
                nr += 1
        tree_off[t] = nn
        root = nn
        nn += 1
        sp = 0
        st_s[sp] = 0
        st_e[sp] = nr
        st_node[sp] = root
        sp += 1
        while sp > 0:
            sp -= 1
            s0 = st_s[sp]
            e0 = st_e[sp]
            node = st_node[sp]
            W = 0.0
            S = 0.0
            ymin = np.inf
            ymax = -np.inf
            for i in range(s0, e0):
                c = cnt[rows[i]]
                yy = y[rows[i]]
                W += c
                S += c * yy
                ymin = min(ymin, yy)
                ymax = max(ymax, yy)
            best = 0.0
            bf = -1
            bt = 0.0
            if W >= 2 * min_leaf and ymax > ymin:
                fs = _choose_features(d, mtry)
                for fi in range(fs.shape[0]):
                    f = fs[fi]
                    cands = _candidate_thresholds(rows, s0, e0, X, f, nsplit)
                    if cands.shape[0] == 0:
                        continue
                    gain, c = _best_variance(rows, s0, e0, X, f, cands, y, cnt, W, S,
                                             min_leaf, binbuf)
                    if gain > best:
                        best = gain
                        bf = f
                        bt = c
            if bf >= 0:
                mid = _partition(rows, buf, s0, e0, X, bf, bt)
                feat[node] = bf
                thr[node] = bt
                left[node] = nn
                right[node] = nn + 1
                st_s[sp] = mid
                st_e[sp] = e0
                st_node[sp] = nn + 1
                sp += 1
                st_s[sp] = s0
                st_e[sp] = mid
                st_node[sp] = nn
                sp += 1
                nn += 2
            else:
                value[node] = S / W
    tree_off[T] = nn
    return feat[:nn], thr[:nn], left[:nn], right[:nn], value[:nn], tree_off


@njit(cache=True)
def predict_regression_forest(Xq, feat, thr, left, right, value, tree_off):
    T = tree_off.shape[0] - 1
    m = Xq.shape[0]
    out = np.zeros(m)
    for t in range(T):
        root = tree_off[t]
        for i in range(m):
            out[i] += value[_leaf(Xq[i], root, feat, thr, left, right)]
    return out / T
