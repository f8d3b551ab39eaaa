"""Compiled sweep loops for the block-coordinate solvers.

Every block of the objective is quadratic in that block (apart from the
volume term on ``f``), so a trial step ``d`` is scored from the current
residual without re-evaluating the whole objective:

    change = <d, grad> + d' H d        (H = block Hessian / 2)

This turns each backtracking trial into an O(N) or O(M) computation; the
O(MN) work per sweep is spent on gradients and residual updates only.

Layout: pixels are rows here (``Yt`` is ``Ntot x M``) so each pixel vector
is contiguous. ``offsets[k]:offsets[k+1]`` selects patch ``k``.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NONFINITE = 1


@njit(cache=True)
def _volume(f):
    M = f.shape[0]
    s = 0.0
    n2 = 0.0
    for i in range(M):
        s += f[i]
        n2 += f[i] * f[i]
    if n2 == 0.0:
        return np.nan
    out = 1.0 - s * s / (M * n2)
    if out < 0.0:
        out = 0.0
    return out


@njit(cache=True)
def _project_unit_nonneg(y, out):
    """Write the sphere-orthant projection of ``y`` into ``out``; True if out == y."""
    M = y.shape[0]
    n2 = 0.0
    for i in range(M):
        if y[i] > 0.0:
            n2 += y[i] * y[i]
    if n2 > 0.0:
        inv = 1.0 / np.sqrt(n2)
        same = True
        for i in range(M):
            if y[i] > 0.0:
                out[i] = y[i] * inv
            else:
                out[i] = 0.0
            if out[i] != y[i]:
                same = False
        return same
    best = 0
    for i in range(1, M):
        if abs(y[i]) < abs(y[best]):
            best = i
    for i in range(M):
        out[i] = 0.0
    out[best] = 1.0
    return False


@njit(cache=True)
def _refresh(Yt, offsets, f, V, C, R, G):
    """Recompute the residual and every patch's C-gradient; return sum of R^2."""
    K = offsets.shape[0] - 1
    M = f.shape[0]
    total = 0.0
    for k in range(K):
        for j in range(offsets[k], offsets[k + 1]):
            c0 = C[j, 0]
            c1 = C[j, 1]
            s0 = 0.0
            s1 = 0.0
            for i in range(M):
                r = Yt[j, i] - V[k, i] * (f[i] * c0 + c1)
                R[j, i] = r
                total += r * r
                t = V[k, i] * r
                s0 += t * f[i]
                s1 += t
            G[j, 0] = -2.0 * s0
            G[j, 1] = -2.0 * s1
    return total


@njit(cache=True)
def _v_grad(k, offsets, f, C, R, g, q):
    M = f.shape[0]
    for i in range(M):
        g[i] = 0.0
        q[i] = 0.0
    for j in range(offsets[k], offsets[k + 1]):
        c0 = C[j, 0]
        c1 = C[j, 1]
        for i in range(M):
            p = f[i] * c0 + c1
            g[i] += R[j, i] * p
            q[i] += p * p
    for i in range(M):
        g[i] *= -2.0


@njit(cache=True)
def _f_grad_add(k, offsets, V, C, R, g, q):
    # accumulates sum R v c0 (sign fixed later) and sum (v c0)^2
    M = V.shape[1]
    for j in range(offsets[k], offsets[k + 1]):
        c0 = C[j, 0]
        if c0 == 0.0:
            continue
        for i in range(M):
            w = V[k, i] * c0
            g[i] += R[j, i] * w
            q[i] += w * w


@njit(cache=True)
def _step_C(k, offsets, f, V, C, R, G, vg, vq, eta0, shrink, armijo_c, max_bt):
    """Backtracking step on C_k. On acceptance the residual is updated and the
    v_k gradient is accumulated in the same pass. Returns True if C_k moved."""
    M = f.shape[0]
    a = offsets[k]
    b = offsets[k + 1]
    h00 = 0.0
    h01 = 0.0
    h11 = 0.0
    for i in range(M):
        w2 = V[k, i] * V[k, i]
        h00 += w2 * f[i] * f[i]
        h01 += w2 * f[i]
        h11 += w2
    g2 = 0.0
    for j in range(a, b):
        g2 += G[j, 0] * G[j, 0] + G[j, 1] * G[j, 1]

    eta = eta0
    for _ in range(max_bt + 1):
        change = 0.0
        clipped = False
        moved = False
        for j in range(a, b):
            g0 = G[j, 0]
            g1 = G[j, 1]
            t0 = C[j, 0] - eta * g0
            t1 = C[j, 1] - eta * g1
            if t0 < 0.0:
                t0 = 0.0
                clipped = True
            if t1 < 0.0:
                t1 = 0.0
                clipped = True
            d0 = t0 - C[j, 0]
            d1 = t1 - C[j, 1]
            if d0 != 0.0 or d1 != 0.0:
                moved = True
            change += d0 * g0 + d1 * g1 + d0 * d0 * h00 + 2.0 * d0 * d1 * h01 + d1 * d1 * h11
        if not moved:
            return False
        if clipped:
            ok = change <= 0.0
        else:
            ok = change <= -armijo_c * eta * g2
        if ok:
            for i in range(M):
                vg[i] = 0.0
                vq[i] = 0.0
            for j in range(a, b):
                t0 = max(C[j, 0] - eta * G[j, 0], 0.0)
                t1 = max(C[j, 1] - eta * G[j, 1], 0.0)
                d0 = t0 - C[j, 0]
                d1 = t1 - C[j, 1]
                C[j, 0] = t0
                C[j, 1] = t1
                for i in range(M):
                    r = R[j, i] - V[k, i] * (f[i] * d0 + d1)
                    R[j, i] = r
                    p = f[i] * t0 + t1
                    vg[i] += r * p
                    vq[i] += p * p
            for i in range(M):
                vg[i] *= -2.0
            return True
        eta *= shrink
    return False


@njit(cache=True)
def _step_sphere(x, g, q, extra_lam, trial, proj, eta0, shrink, armijo_c, max_bt):
    """Backtracking on the sphere-orthant block ``x`` with quadratic model
    ``<d, g> + sum q d^2`` plus, if ``extra_lam > 0``, ``extra_lam * volume``
    whose gradient must already be included in ``g_full = g + extra_lam * grad``.

    Returns the accepted step size or 0. On acceptance ``proj`` holds the new point.
    """
    M = x.shape[0]
    vol0 = 0.0
    a1 = 0.0
    a2 = 0.0
    if extra_lam != 0.0:
        s = 0.0
        n2 = 0.0
        for i in range(M):
            s += x[i]
            n2 += x[i] * x[i]
        vol0 = _volume(x)
        a1 = -2.0 * s / (M * n2)
        a2 = 2.0 * s * s / (M * n2 * n2)
    g2 = 0.0
    for i in range(M):
        gt = g[i] + extra_lam * (a1 + a2 * x[i])
        g2 += gt * gt
    eta = eta0
    for _ in range(max_bt + 1):
        for i in range(M):
            trial[i] = x[i] - eta * (g[i] + extra_lam * (a1 + a2 * x[i]))
        same = _project_unit_nonneg(trial, proj)
        change = 0.0
        moved = False
        for i in range(M):
            d = proj[i] - x[i]
            if d != 0.0:
                moved = True
            change += d * g[i] + d * d * q[i]
        if not moved:
            return 0.0
        if extra_lam != 0.0:
            change += extra_lam * (_volume(proj) - vol0)
        if same:
            ok = change <= -armijo_c * eta * g2
        else:
            ok = change <= 0.0
        if ok:
            return eta
        eta *= shrink
    return 0.0


@njit(cache=True)
def minvol_sweeps(Yt, offsets, f, V, C, lam, n_iters, eta0, shrink, armijo_c, max_bt, rel_tol, stop_below, trace):
    """Run up to ``n_iters`` sweeps in place.

    ``trace[0]`` receives the starting objective and ``trace[i]`` the value
    after sweep ``i``, both from a freshly recomputed residual. Stops early
    when the relative decrease drops under ``rel_tol`` or the objective under
    ``stop_below`` (either test is off at 0). Returns ``(sweeps_run, status)``.
    """
    M = f.shape[0]
    K = offsets.shape[0] - 1
    R = np.empty_like(Yt)
    G = np.empty((Yt.shape[0], 2))
    vg = np.empty(M)
    vq = np.empty(M)
    fg = np.empty(M)
    fq = np.empty(M)
    vk = np.empty(M)
    trial = np.empty(M)
    proj = np.empty(M)

    obj = _refresh(Yt, offsets, f, V, C, R, G) + lam * _volume(f)
    trace[0] = obj
    if not np.isfinite(obj):
        return 0, STATUS_NONFINITE
    for it in range(1, n_iters + 1):
        for i in range(M):
            fg[i] = 0.0
            fq[i] = 0.0
        for k in range(K):
            if not _step_C(k, offsets, f, V, C, R, G, vg, vq, eta0, shrink, armijo_c, max_bt):
                _v_grad(k, offsets, f, C, R, vg, vq)
            for i in range(M):
                vk[i] = V[k, i]
            eta = _step_sphere(vk, vg, vq, 0.0, trial, proj, eta0, shrink, armijo_c, max_bt)
            if eta > 0.0:
                a = offsets[k]
                b = offsets[k + 1]
                for i in range(M):
                    trial[i] = proj[i] - V[k, i]
                    V[k, i] = proj[i]
                for j in range(a, b):
                    c0 = C[j, 0]
                    c1 = C[j, 1]
                    for i in range(M):
                        r = R[j, i] - trial[i] * (f[i] * c0 + c1)
                        R[j, i] = r
                        w = V[k, i] * c0
                        fg[i] += r * w
                        fq[i] += w * w
            else:
                _f_grad_add(k, offsets, V, C, R, fg, fq)
        for i in range(M):
            fg[i] *= -2.0
        eta = _step_sphere(f, fg, fq, lam, trial, proj, eta0, shrink, armijo_c, max_bt)
        if eta > 0.0:
            for i in range(M):
                f[i] = proj[i]
        new = _refresh(Yt, offsets, f, V, C, R, G) + lam * _volume(f)
        trace[it] = new
        if not np.isfinite(new):
            return it, STATUS_NONFINITE
        if rel_tol > 0.0 and obj - new < rel_tol * abs(obj):
            return it, STATUS_OK
        if new < stop_below:
            return it, STATUS_OK
        obj = new
    return n_iters, STATUS_OK



@njit(cache=True)
def _proj_capped_simplex2(a, b):
    """Project (a, b) onto {x >= 0, x0 + x1 <= 1}."""
    a0 = max(a, 0.0)
    b0 = max(b, 0.0)
    if a0 + b0 <= 1.0:
        return a0, b0
    x = 0.5 * (a - b + 1.0)
    if x < 0.0:
        x = 0.0
    elif x > 1.0:
        x = 1.0
    return x, 1.0 - x


@njit(cache=True)
def _logdet_shifted(W, delta):
    M = W.shape[0]
    s00 = delta
    s01 = 0.0
    s11 = delta
    for i in range(M):
        s00 += W[i, 0] * W[i, 0]
        s01 += W[i, 0] * W[i, 1]
        s11 += W[i, 1] * W[i, 1]
    return np.log(s00 * s11 - s01 * s01), s00, s01, s11


@njit(cache=True)
def _nmf_residual(Y, W, H):
    M, N = Y.shape
    total = 0.0
    for i in range(M):
        w0 = W[i, 0]
        w1 = W[i, 1]
        for j in range(N):
            r = Y[i, j] - w0 * H[0, j] - w1 * H[1, j]
            total += r * r
    return total


@njit(cache=True)
def nmf_iterations(Y, W, H, lam, delta, n_iters, eta0, shrink, armijo_c, max_bt, trace):
    """Alternating projected gradient for the log-det regularized rank-2 NMF.

    Columns of ``H`` live in the capped simplex ``{h >= 0, sum(h) <= 1}``;
    ``W`` is nonnegative. Updates run in place; ``trace`` gets the objective
    before the first and after every iteration.
    """
    M, N = Y.shape
    G = np.empty((2, N))
    WtY = np.empty((2, N))
    GW = np.empty((M, 2))
    YHt = np.empty((M, 2))
    Wn = np.empty((M, 2))
    ld, _, _, _ = _logdet_shifted(W, delta)
    trace[0] = _nmf_residual(Y, W, H) + lam * ld
    if not np.isfinite(trace[0]):
        return 0, STATUS_NONFINITE
    for it in range(1, n_iters + 1):
        # H block: exactly quadratic
        a00 = 0.0
        a01 = 0.0
        a11 = 0.0
        for i in range(M):
            a00 += W[i, 0] * W[i, 0]
            a01 += W[i, 0] * W[i, 1]
            a11 += W[i, 1] * W[i, 1]
        for j in range(N):
            WtY[0, j] = 0.0
            WtY[1, j] = 0.0
        for i in range(M):
            w0 = W[i, 0]
            w1 = W[i, 1]
            for j in range(N):
                WtY[0, j] += w0 * Y[i, j]
                WtY[1, j] += w1 * Y[i, j]
        g2 = 0.0
        for j in range(N):
            G[0, j] = -2.0 * (WtY[0, j] - a00 * H[0, j] - a01 * H[1, j])
            G[1, j] = -2.0 * (WtY[1, j] - a01 * H[0, j] - a11 * H[1, j])
            g2 += G[0, j] * G[0, j] + G[1, j] * G[1, j]
        eta = eta0
        for _ in range(max_bt + 1):
            change = 0.0
            moved = False
            clipped = False
            for j in range(N):
                t0 = H[0, j] - eta * G[0, j]
                t1 = H[1, j] - eta * G[1, j]
                p0, p1 = _proj_capped_simplex2(t0, t1)
                if p0 != t0 or p1 != t1:
                    clipped = True
                d0 = p0 - H[0, j]
                d1 = p1 - H[1, j]
                if d0 != 0.0 or d1 != 0.0:
                    moved = True
                change += d0 * G[0, j] + d1 * G[1, j] + a00 * d0 * d0 + 2.0 * a01 * d0 * d1 + a11 * d1 * d1
            if not moved:
                break
            if clipped:
                ok = change <= 0.0
            else:
                ok = change <= -armijo_c * eta * g2
            if ok:
                for j in range(N):
                    p0, p1 = _proj_capped_simplex2(H[0, j] - eta * G[0, j], H[1, j] - eta * G[1, j])
                    H[0, j] = p0
                    H[1, j] = p1
                break
            eta *= shrink

        # W block: quadratic residual plus the log-det term
        b00 = 0.0
        b01 = 0.0
        b11 = 0.0
        for j in range(N):
            b00 += H[0, j] * H[0, j]
            b01 += H[0, j] * H[1, j]
            b11 += H[1, j] * H[1, j]
        for i in range(M):
            s0 = 0.0
            s1 = 0.0
            for j in range(N):
                s0 += Y[i, j] * H[0, j]
                s1 += Y[i, j] * H[1, j]
            YHt[i, 0] = s0
            YHt[i, 1] = s1
        ld0, s00, s01, s11 = _logdet_shifted(W, delta)
        det = s00 * s11 - s01 * s01
        i00 = s11 / det
        i01 = -s01 / det
        i11 = s00 / det
        g2 = 0.0
        for i in range(M):
            w0 = W[i, 0]
            w1 = W[i, 1]
            # residual part only; the log-det part is added when stepping
            GW[i, 0] = -2.0 * (YHt[i, 0] - w0 * b00 - w1 * b01)
            GW[i, 1] = -2.0 * (YHt[i, 1] - w0 * b01 - w1 * b11)
            t0 = GW[i, 0] + 2.0 * lam * (w0 * i00 + w1 * i01)
            t1 = GW[i, 1] + 2.0 * lam * (w0 * i01 + w1 * i11)
            g2 += t0 * t0 + t1 * t1
        eta = eta0
        for _ in range(max_bt + 1):
            change = 0.0
            moved = False
            clipped = False
            for i in range(M):
                w0 = W[i, 0]
                w1 = W[i, 1]
                t0 = w0 - eta * (GW[i, 0] + 2.0 * lam * (w0 * i00 + w1 * i01))
                t1 = w1 - eta * (GW[i, 1] + 2.0 * lam * (w0 * i01 + w1 * i11))
                if t0 < 0.0:
                    t0 = 0.0
                    clipped = True
                if t1 < 0.0:
                    t1 = 0.0
                    clipped = True
                Wn[i, 0] = t0
                Wn[i, 1] = t1
                d0 = t0 - w0
                d1 = t1 - w1
                if d0 != 0.0 or d1 != 0.0:
                    moved = True
                change += d0 * GW[i, 0] + d1 * GW[i, 1] + b00 * d0 * d0 + 2.0 * b01 * d0 * d1 + b11 * d1 * d1
            if not moved:
                break
            if lam != 0.0:
                ld1, _, _, _ = _logdet_shifted(Wn, delta)
                change += lam * (ld1 - ld0)
            if clipped:
                ok = change <= 0.0
            else:
                ok = change <= -armijo_c * eta * g2
            if ok:
                for i in range(M):
                    W[i, 0] = Wn[i, 0]
                    W[i, 1] = Wn[i, 1]
                break
            eta *= shrink

        ld, _, _, _ = _logdet_shifted(W, delta)
        trace[it] = _nmf_residual(Y, W, H) + lam * ld
        if not np.isfinite(trace[it]):
            return it, STATUS_NONFINITE
    return n_iters, STATUS_OK
