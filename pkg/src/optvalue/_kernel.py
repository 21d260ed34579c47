"""Compiled Nadaraya-Watson core for the Epanechnikov blip estimator.

Window sums are read off prefix sums of the moments (1, w, w^2) and
(y, y*w, y*w^2) of each treatment arm sorted by covariate, so a query costs
two binary searches regardless of bandwidth. The constant 3/4 of the kernel
cancels in the ratio and is never applied.
"""

import numpy as np
from numba import njit

# Relative kernel mass below which a window is treated as empty. Below this
# level the prefix-sum cancellation error is comparable to the mass itself.
_EMPTY_MASS = 1e-9


@njit(cache=True)
def arm_prefix(w_sorted, y_sorted):
    n = w_sorted.shape[0]
    p = np.zeros((n + 1, 6))
    for i in range(n):
        w = w_sorted[i]
        y = y_sorted[i]
        p[i + 1, 0] = p[i, 0] + 1.0
        p[i + 1, 1] = p[i, 1] + w
        p[i + 1, 2] = p[i, 2] + w * w
        p[i + 1, 3] = p[i, 3] + y
        p[i + 1, 4] = p[i, 4] + y * w
        p[i + 1, 5] = p[i, 5] + y * w * w
    return p


@njit(cache=True)
def _nearest_mean(ws, p, x):
    """Outcome average over the training points nearest to ``x``."""
    n = ws.shape[0]
    pos = np.searchsorted(ws, x)
    dl = np.inf
    dr = np.inf
    if pos > 0:
        dl = x - ws[pos - 1]
    if pos < n:
        dr = ws[pos] - x
    total = 0.0
    count = 0.0
    if dl <= dr:
        v = ws[pos - 1]
        a = np.searchsorted(ws, v, side="left")
        b = np.searchsorted(ws, v, side="right")
        total += p[b, 3] - p[a, 3]
        count += b - a
    if dr <= dl:
        v = ws[pos]
        a = np.searchsorted(ws, v, side="left")
        b = np.searchsorted(ws, v, side="right")
        total += p[b, 3] - p[a, 3]
        count += b - a
    return total / count


@njit(cache=True)
def _window_mean(p, lo, hi, lo_y, hi_y, x, h):
    """Kernel-weighted mean over sorted indices ``[lo, hi)``; nan if massless."""
    if hi <= lo:
        return np.nan
    s0 = p[hi, 0] - p[lo, 0]
    s1 = p[hi, 1] - p[lo, 1]
    s2 = p[hi, 2] - p[lo, 2]
    inv = 1.0 / (h * h)
    den = s0 - (x * x * s0 - 2.0 * x * s1 + s2) * inv
    if den <= _EMPTY_MASS * s0:
        return np.nan
    s3 = p[hi, 3] - p[lo, 3]
    s4 = p[hi, 4] - p[lo, 4]
    s5 = p[hi, 5] - p[lo, 5]
    m = (s3 - (x * x * s3 - 2.0 * x * s4 + s5) * inv) / den
    if m < lo_y:
        return lo_y
    if m > hi_y:
        return hi_y
    return m


@njit(cache=True)
def arm_means_sorted(ws, lo_y, hi_y, p, xs, h, out):
    """Kernel-weighted means of one arm at ascending query points ``xs``.

    Falls back to the nearest training point(s) when the open window
    ``(x - h, x + h)`` carries no kernel mass.
    """
    n = ws.shape[0]
    lo = 0
    hi = 0
    for i in range(xs.shape[0]):
        x = xs[i]
        while lo < n and ws[lo] <= x - h:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < n and ws[hi] < x + h:
            hi += 1
        m = _window_mean(p, lo, hi, lo_y, hi_y, x, h)
        if np.isnan(m):
            m = _nearest_mean(ws, p, x)
        out[i] = m


@njit(cache=True)
def split_arms(w, a, y):
    """Sort each arm by covariate; returns (w1, y1, p1, w0, y0, p0)."""
    order = np.argsort(w, kind="mergesort")
    n1 = 0
    for i in range(w.shape[0]):
        if a[i] == 1:
            n1 += 1
    n0 = w.shape[0] - n1
    w1 = np.empty(n1)
    y1 = np.empty(n1)
    w0 = np.empty(n0)
    y0 = np.empty(n0)
    i1 = 0
    i0 = 0
    for k in range(order.shape[0]):
        i = order[k]
        if a[i] == 1:
            w1[i1] = w[i]
            y1[i1] = y[i]
            i1 += 1
        else:
            w0[i0] = w[i]
            y0[i0] = y[i]
            i0 += 1
    return w1, y1, arm_prefix(w1, y1), w0, y0, arm_prefix(w0, y0)


@njit(cache=True)
def predict_arms(w1, y1, p1, w0, y0, p0, query, h):
    """Treated mean, control mean at every query point (any order)."""
    order = np.argsort(query, kind="mergesort")
    xs = query[order]
    t1 = np.empty(xs.shape[0])
    t0 = np.empty(xs.shape[0])
    arm_means_sorted(w1, y1.min(), y1.max(), p1, xs, h, t1)
    arm_means_sorted(w0, y0.min(), y0.max(), p0, xs, h, t0)
    m1 = np.empty(xs.shape[0])
    m0 = np.empty(xs.shape[0])
    m1[order] = t1
    m0[order] = t0
    return m1, m0


@njit(cache=True)
def _nested_window_means(ws, p, lo_y, hi_y, xq, hs, out):
    """Arm means at ascending queries ``xq`` for every ascending bandwidth.

    Windows for growing bandwidths are nested, so each query scans outward
    from its insertion point once; ``out`` has shape ``(len(hs), len(xq))``.
    """
    n = ws.shape[0]
    pos = 0
    for i in range(xq.shape[0]):
        x = xq[i]
        while pos < n and ws[pos] < x:
            pos += 1
        lo = pos
        hi = pos
        near = np.nan
        for t in range(hs.shape[0]):
            h = hs[t]
            while lo > 0 and ws[lo - 1] > x - h:
                lo -= 1
            while hi < n and ws[hi] < x + h:
                hi += 1
            m = _window_mean(p, lo, hi, lo_y, hi_y, x, h)
            if np.isnan(m):
                if np.isnan(near):
                    near = _nearest_mean(ws, p, x)
                m = near
            out[t, i] = m


@njit(cache=True)
def cv_risk(w, a, y, pseudo, folds, n_folds, hs):
    """Cross-validated squared-error risk of the blip estimate per bandwidth.

    ``folds`` holds a fold label in ``[0, n_folds)`` for every point and
    ``pseudo`` the pseudo-outcome the blip estimate is scored against.
    Returns ``nan`` for every bandwidth when some training split lacks an arm.
    """
    n = w.shape[0]
    nh = hs.shape[0]
    risk = np.zeros(nh)
    order = np.argsort(w, kind="mergesort")
    for k in range(n_folds):
        n1 = 0
        n0 = 0
        nq = 0
        for i in range(n):
            if folds[i] == k:
                nq += 1
            elif a[i] == 1:
                n1 += 1
            else:
                n0 += 1
        if n1 == 0 or n0 == 0:
            risk[:] = np.nan
            return risk
        w1 = np.empty(n1)
        y1 = np.empty(n1)
        w0 = np.empty(n0)
        y0 = np.empty(n0)
        xq = np.empty(nq)
        pq = np.empty(nq)
        i1 = 0
        i0 = 0
        iq = 0
        for r in range(n):
            i = order[r]
            if folds[i] == k:
                xq[iq] = w[i]
                pq[iq] = pseudo[i]
                iq += 1
            elif a[i] == 1:
                w1[i1] = w[i]
                y1[i1] = y[i]
                i1 += 1
            else:
                w0[i0] = w[i]
                y0[i0] = y[i]
                i0 += 1
        m1 = np.empty((nh, nq))
        m0 = np.empty((nh, nq))
        _nested_window_means(w1, arm_prefix(w1, y1), y1.min(), y1.max(), xq, hs, m1)
        _nested_window_means(w0, arm_prefix(w0, y0), y0.min(), y0.max(), xq, hs, m0)
        for t in range(nh):
            acc = 0.0
            for i in range(nq):
                r = pq[i] - (m1[t, i] - m0[t, i])
                acc += r * r
            risk[t] += acc
    for t in range(nh):
        risk[t] /= n
    return risk


@njit(cache=True)
def injected_classical(w, a, y, q1, q0, g1, folds, n_folds, hs):
    """Classical one-step value with known outcome regression and propensity.

    The rule is the sign of a Nadaraya-Watson blip whose bandwidth minimizes
    the cross-validated risk. ``q1``, ``q0`` and ``g1`` are the known
    regression arms and treated propensity at each record. Returns
    ``(value, bandwidth)``, or ``(nan, nan)`` when an arm is missing.
    """
    n = w.shape[0]
    pseudo = np.empty(n)
    for i in range(n):
        if a[i] == 1:
            pseudo[i] = (y[i] - q1[i]) / g1[i] + q1[i] - q0[i]
        else:
            pseudo[i] = -(y[i] - q0[i]) / (1.0 - g1[i]) + q1[i] - q0[i]
    risk = cv_risk(w, a, y, pseudo, folds, n_folds, hs)
    if np.isnan(risk[0]):
        return np.nan, np.nan
    h = hs[np.argmin(risk)]
    w1, y1, p1, w0, y0, p0 = split_arms(w, a, y)
    m1, m0 = predict_arms(w1, y1, p1, w0, y0, p0, w, h)
    total = 0.0
    for i in range(n):
        treat = (m1[i] - m0[i]) > 0
        qd = q1[i] if treat else q0[i]
        val = qd
        if (a[i] == 1) == treat:
            g = g1[i] if treat else 1.0 - g1[i]
            val += (y[i] - qd) / g
        total += val
    return total / n, h
