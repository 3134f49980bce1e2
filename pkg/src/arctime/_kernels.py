"""Hot loops of the sampler, compiled by numba when available.

Everything here works on dense positions (node and arc indices into the
network arrays). Paths live in a padded ``(n_trips, max_len)`` int array with
a separate length vector; arc times use the same layout.

Randomness comes only from ``np.random.random`` and
``np.random.standard_normal`` so both backends share one stream.
"""

import math

import numpy as np

from ._jit import jit

LOG2PI = math.log(2.0 * math.pi)

ACCEPT = 1
REJECT = 0
SKIP = -1


@jit
def rand_index(n):
    k = int(np.random.random() * n)
    if k >= n:
        k = n - 1
    return k


@jit
def rand_gamma(shape):
    # Marsaglia & Tsang; shapes below one are boosted by U**(1/shape).
    boost = 1.0
    a = shape
    if a < 1.0:
        boost = np.random.random() ** (1.0 / a)
        a += 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = np.random.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = np.random.random()
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v * boost
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v * boost


@jit
def lognormal_logpdf(t, mu, s2):
    lt = math.log(t)
    return -lt - 0.5 * (LOG2PI + math.log(s2)) - (lt - mu) * (lt - mu) / (2.0 * s2)


@jit
def trajectory_eval(path, times, n, qt, arc_from, arc_to, node_x, node_y, arc_len, out):
    """Fill ``out[r] = (x, y, speed)`` for nondecreasing query times ``qt``."""
    k = 0
    t0 = 0.0
    for r in range(qt.shape[0]):
        t = qt[r]
        while k < n - 1 and t >= t0 + times[k]:
            t0 += times[k]
            k += 1
        a = path[k]
        frac = (t - t0) / times[k]
        if frac < 0.0:
            frac = 0.0
        elif frac > 1.0:
            frac = 1.0
        u = arc_from[a]
        v = arc_to[a]
        out[r, 0] = node_x[u] + frac * (node_x[v] - node_x[u])
        out[r, 1] = node_y[u] + frac * (node_y[v] - node_y[u])
        out[r, 2] = arc_len[a] / times[k]


@jit
def trip_gps_loglik(path, times, n, rt, rx, ry, rlogv, arc_from, arc_to, node_x, node_y, arc_len, gps):
    """Sum of location and speed log densities over one trip's readings.

    ``gps`` is ``[inv00, inv01, inv11, location normaliser, zeta2]``.
    """
    zeta2 = gps[4]
    spd_const = -0.5 * (LOG2PI + math.log(zeta2))
    total = 0.0
    k = 0
    t0 = 0.0
    for r in range(rt.shape[0]):
        t = rt[r]
        while k < n - 1 and t >= t0 + times[k]:
            t0 += times[k]
            k += 1
        a = path[k]
        frac = (t - t0) / times[k]
        if frac < 0.0:
            frac = 0.0
        elif frac > 1.0:
            frac = 1.0
        u = arc_from[a]
        v = arc_to[a]
        dx = rx[r] - (node_x[u] + frac * (node_x[v] - node_x[u]))
        dy = ry[r] - (node_y[u] + frac * (node_y[v] - node_y[u]))
        total += gps[3] - 0.5 * (gps[0] * dx * dx + 2.0 * gps[1] * dx * dy + gps[2] * dy * dy)
        e = rlogv[r] - math.log(arc_len[a] / times[k]) + 0.5 * zeta2
        total += spd_const - e * e / (2.0 * zeta2)
    return total


@jit
def _trip_gps(i, path, times, n, reads, net, gps):
    lo = reads[0][i]
    hi = reads[0][i + 1]
    if hi == lo:
        return 0.0
    return trip_gps_loglik(
        path, times, n, reads[1][lo:hi], reads[2][lo:hi], reads[3][lo:hi], reads[4][lo:hi],
        net[0], net[1], net[2], net[3], net[4], gps,
    )


@jit
def log_dirichlet(x, a, n):
    sa = 0.0
    out = 0.0
    for k in range(n):
        sa += a[k]
        out += (a[k] - 1.0) * math.log(x[k]) - math.lgamma(a[k])
    return out + math.lgamma(sa)


@jit
def section_log_ratio(i, path, tm, n1, p, w, new_path, new_times, n2, net, reads, gps,
                      mu, sigma2, theta, C, alpha, K, work_a, work_x):
    """Log acceptance ratio for replacing ``path[p:p + w]`` by the section of
    ``new_path`` starting at ``p`` (same endpoints, same section total)."""
    n = n2 - n1 + w
    S = 0.0
    for k in range(p, p + w):
        S += tm[k]
    log_ratio = 0.0
    for k in range(p, p + n):
        a = new_path[k]
        log_ratio += -C * theta[a] + lognormal_logpdf(new_times[k], mu[a], sigma2[a])
    for k in range(p, p + w):
        a = path[k]
        log_ratio -= -C * theta[a] + lognormal_logpdf(tm[k], mu[a], sigma2[a])
    log_ratio += _trip_gps(i, new_path, new_times, n2, reads, net, gps)
    log_ratio -= _trip_gps(i, path, tm, n1, reads, net, gps)

    # section-choice probabilities; the route-set sizes cancel
    a1 = n1 - p
    a2 = n2 - p
    w1max = a1 if a1 < K else K
    w2max = a2 if a2 < K else K
    log_ratio += math.log(n1 * w1max) - math.log(n2 * w2max)
    # Dirichlet proposal densities: reverse over forward, plus the S^(n-w) Jacobian
    for k in range(n):
        work_a[k] = alpha * theta[new_path[p + k]]
        work_x[k] = new_times[p + k] / S
    log_ratio -= log_dirichlet(work_x, work_a, n)
    for k in range(w):
        work_a[k] = alpha * theta[path[p + k]]
        work_x[k] = tm[p + k] / S
    log_ratio += log_dirichlet(work_x, work_a, w)
    log_ratio += (n - w) * math.log(S)
    return log_ratio


@jit
def path_move(i, paths, plen, times, net, reads, gps, routes, mu, sigma2, theta,
              C, alpha, K, buf_path, buf_times, mark, cand, work_a, work_x, info):
    """Reversible-jump update of trip ``i``'s path section and its times.

    ``info`` receives ``[log acceptance ratio, n_current, n_proposed,
    section total, start index]`` for the attempted move.
    """
    arc_from = net[0]
    arc_to = net[1]
    n1 = plen[i]
    path = paths[i]
    tm = times[i]

    p = rand_index(n1)
    a1 = n1 - p
    wmax = a1 if a1 < K else K
    w = 1 + rand_index(wmax)
    q = p + w
    d1 = arc_from[path[p]]
    d2 = arc_to[path[q - 1]]

    for k in range(p):
        mark[arc_from[path[k]]] = 1
    for k in range(q, n1):
        mark[arc_to[path[k]]] = 1
    start_ptr = routes[0]
    route_end = routes[1]
    route_arcs = routes[2]
    route_len = routes[3]
    lo = start_ptr[d1]
    hi = start_ptr[d1 + 1]
    r_lo = lo + np.searchsorted(route_end[lo:hi], d2)
    nc = 0
    r = r_lo
    while r < hi and route_end[r] == d2:
        ok = True
        for k in range(route_len[r] - 1):
            if mark[arc_to[route_arcs[r, k]]] == 1:
                ok = False
                break
        if ok:
            cand[nc] = r
            nc += 1
        r += 1
    for k in range(p):
        mark[arc_from[path[k]]] = 0
    for k in range(q, n1):
        mark[arc_to[path[k]]] = 0
    if nc == 0:
        return SKIP

    r = cand[rand_index(nc)]
    n = route_len[r]
    S = 0.0
    for k in range(p, q):
        S += tm[k]

    gsum = 0.0
    for k in range(n):
        work_a[k] = alpha * theta[route_arcs[r, k]]
        work_x[k] = rand_gamma(work_a[k])
        gsum += work_x[k]
    if not gsum > 0.0:
        return REJECT
    acc = 0.0
    for k in range(n):
        work_x[k] = work_x[k] / gsum
        if not work_x[k] > 0.0:
            return REJECT

    n2 = n1 - w + n
    for k in range(p):
        buf_path[k] = path[k]
        buf_times[k] = tm[k]
    for k in range(n):
        buf_path[p + k] = route_arcs[r, k]
        if k < n - 1:
            buf_times[p + k] = work_x[k] * S
            acc += buf_times[p + k]
        else:
            buf_times[p + k] = S - acc
    if not buf_times[p + n - 1] > 0.0:
        return REJECT
    for k in range(q, n1):
        buf_path[k - w + n] = path[k]
        buf_times[k - w + n] = tm[k]

    log_ratio = section_log_ratio(i, path, tm, n1, p, w, buf_path, buf_times, n2, net, reads, gps,
                                  mu, sigma2, theta, C, alpha, K, work_a, work_x)

    info[0] = log_ratio
    info[1] = w
    info[2] = n
    info[3] = S
    info[4] = p
    if math.log(np.random.random()) < log_ratio:
        for k in range(n2):
            path[k] = buf_path[k]
            tm[k] = buf_times[k]
        for k in range(n2, n1):
            path[k] = -1
            tm[k] = 0.0
        plen[i] = n2
        return ACCEPT
    return REJECT


@jit
def times_move(i, paths, plen, times, net, reads, gps, mu, sigma2, theta, alpha_p, buf_times, info):
    """Redistribute the combined time of two random arcs of trip ``i``."""
    n = plen[i]
    if n < 2:
        return SKIP
    path = paths[i]
    tm = times[i]
    j1 = rand_index(n)
    j2 = rand_index(n - 1)
    if j2 >= j1:
        j2 += 1
    c1 = path[j1]
    c2 = path[j2]
    S = tm[j1] + tm[j2]
    a1 = alpha_p * theta[c1]
    a2 = alpha_p * theta[c2]
    g1 = rand_gamma(a1)
    g2 = rand_gamma(a2)
    if not (g1 + g2) > 0.0:
        return REJECT
    new1 = g1 / (g1 + g2) * S
    new2 = S - new1
    if not (new1 > 0.0 and new2 > 0.0):
        return REJECT
    for k in range(n):
        buf_times[k] = tm[k]
    buf_times[j1] = new1
    buf_times[j2] = new2

    log_ratio = (lognormal_logpdf(new1, mu[c1], sigma2[c1]) + lognormal_logpdf(new2, mu[c2], sigma2[c2])
                 - lognormal_logpdf(tm[j1], mu[c1], sigma2[c1]) - lognormal_logpdf(tm[j2], mu[c2], sigma2[c2]))
    log_ratio += _trip_gps(i, path, buf_times, n, reads, net, gps)
    log_ratio -= _trip_gps(i, path, tm, n, reads, net, gps)
    # Beta(a1, a2) proposal density at old split over new split
    log_ratio += ((a1 - 1.0) * math.log(tm[j1] / S) + (a2 - 1.0) * math.log(tm[j2] / S)
                  - (a1 - 1.0) * math.log(new1 / S) - (a2 - 1.0) * math.log(new2 / S))
    info[0] = log_ratio
    if math.log(np.random.random()) < log_ratio:
        tm[j1] = new1
        tm[j2] = new2
        return ACCEPT
    return REJECT


@jit
def sweep(paths, plen, times, net, reads, gps, routes, mu, sigma2, C, alpha, alpha_p, K,
          do_path, do_times, counters):
    """One pass over all trips: a path move then a times move per trip.

    ``counters`` has shape ``(n_trips, 4)``: path accepts, path skips,
    times accepts, times skips.
    """
    n_trips = plen.shape[0]
    max_len = paths.shape[1]
    n_nodes = net[2].shape[0]
    # scalar libm exp keeps both backends bit-identical (numpy's vector exp differs in the last ulp)
    theta = np.empty(mu.shape[0])
    for j in range(mu.shape[0]):
        theta[j] = math.exp(mu[j] + 0.5 * sigma2[j])
    buf_path = np.empty(max_len, dtype=np.int64)
    buf_times = np.empty(max_len)
    mark = np.zeros(n_nodes, dtype=np.int64)
    max_routes = 1
    sp = routes[0]
    for u in range(sp.shape[0] - 1):
        if sp[u + 1] - sp[u] > max_routes:
            max_routes = sp[u + 1] - sp[u]
    cand = np.empty(max_routes, dtype=np.int64)
    work_a = np.empty(max_len + K)
    work_x = np.empty(max_len + K)
    info = np.zeros(5)
    for i in range(n_trips):
        if do_path:
            res = path_move(i, paths, plen, times, net, reads, gps, routes, mu, sigma2, theta,
                            C, alpha, K, buf_path, buf_times, mark, cand, work_a, work_x, info)
            if res == ACCEPT:
                counters[i, 0] += 1
            elif res == SKIP:
                counters[i, 1] += 1
        if do_times:
            res = times_move(i, paths, plen, times, net, reads, gps, mu, sigma2, theta, alpha_p, buf_times, info)
            if res == ACCEPT:
                counters[i, 2] += 1
            elif res == SKIP:
                counters[i, 3] += 1


@jit
def arc_time_stats(paths, plen, times, n_arcs):
    """Per-arc traversal counts, sums of log times and of squared log times."""
    cnt = np.zeros(n_arcs)
    s1 = np.zeros(n_arcs)
    s2 = np.zeros(n_arcs)
    for i in range(plen.shape[0]):
        for k in range(plen[i]):
            a = paths[i, k]
            lt = math.log(times[i, k])
            cnt[a] += 1.0
            s1[a] += lt
            s2[a] += lt * lt
    return cnt, s1, s2


@jit
def speed_log_residuals(paths, plen, times, net, reads):
    """``log(measured speed) - log(true speed)`` for every reading."""
    ptr = reads[0]
    out = np.empty(reads[1].shape[0])
    buf = np.empty((out.shape[0], 3))
    for i in range(plen.shape[0]):
        lo = ptr[i]
        hi = ptr[i + 1]
        if hi == lo:
            continue
        trajectory_eval(paths[i], times[i], plen[i], reads[1][lo:hi], net[0], net[1], net[2], net[3], net[4],
                        buf[lo:hi])
        for r in range(lo, hi):
            out[r] = reads[4][r] - math.log(buf[r, 2])
    return out
