"""Compiled inner loops (numba). Everything here works on plain arrays."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _draw(cum_row, u):
    k = cum_row.shape[0]
    for j in range(k - 1):
        if u < cum_row[j]:
            return j
    return k - 1


@njit(cache=True, nogil=True)
def simulate_path(cum_pi, cum_delta, cum_emit, u, prev_state, states, symbols):
    """Fill ``states``/``symbols`` from uniforms ``u`` of shape (k, 2).

    ``prev_state < 0`` starts the path from the stationary law. Returns the
    last state so that long paths can be produced chunk by chunk.
    """
    y = prev_state
    for t in range(u.shape[0]):
        if y < 0:
            y = _draw(cum_pi, u[t, 0])
        else:
            y = _draw(cum_delta[y], u[t, 0])
        states[t] = y
        symbols[t] = _draw(cum_emit[y], u[t, 1])
    return y


@njit(cache=True, nogil=True, inline="always")
def _kahan(acc, comp, k, x):
    y = x - comp[k]
    t = acc[k] + y
    comp[k] = (t - acc[k]) - y
    acc[k] = t


# The filter update is written out in both kernels below: factoring it into a
# jitted helper makes the loop about three times slower.


@njit(cache=True, nogil=True)
def deriv_filter(d0, d1, d2, emit, z, order, v0, w1, w2, acc, comp, steps, write_steps):
    """Advance the derivative-carrying forward filter over symbols ``z``.

    ``v0`` is the normalized forward vector, ``w1``/``w2`` its first and second
    parameter derivatives; all three are updated in place. Per-symbol
    increments of log p(z_t | past) and its derivatives are added to ``acc``
    with compensated summation and optionally written to ``steps[t]``.
    """
    s = d0.shape[0]
    u0 = np.empty(s)
    u1 = np.empty(s)
    u2 = np.empty(s)
    for t in range(z.shape[0]):
        zt = z[t]
        f0 = 0.0
        f1 = 0.0
        f2 = 0.0
        for j in range(s):
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            for i in range(s):
                a0 += v0[i] * d0[i, j]
                if order >= 1:
                    a1 += w1[i] * d0[i, j] + v0[i] * d1[i, j]
                if order >= 2:
                    a2 += w2[i] * d0[i, j] + 2.0 * w1[i] * d1[i, j] + v0[i] * d2[i, j]
            e = emit[j, zt]
            u0[j] = a0 * e
            u1[j] = a1 * e
            u2[j] = a2 * e
            f0 += u0[j]
            f1 += u1[j]
            f2 += u2[j]
        g1 = f1 / f0
        for j in range(s):
            v0[j] = u0[j] / f0
        if order >= 1:
            for j in range(s):
                w1[j] = (u1[j] - v0[j] * f1) / f0
        if order >= 2:
            for j in range(s):
                w2[j] = (u2[j] - 2.0 * w1[j] * f1 - v0[j] * f2) / f0
        inc0 = np.log(f0)
        inc2 = f2 / f0 - g1 * g1
        _kahan(acc, comp, 0, inc0)
        if order >= 1:
            _kahan(acc, comp, 1, g1)
        if order >= 2:
            _kahan(acc, comp, 2, inc2)
        if write_steps:
            steps[t, 0] = inc0
            steps[t, 1] = g1
            steps[t, 2] = inc2


@njit(cache=True, nogil=True)
def batch_checkpoints(cum_pi, cum_delta, cum_emit, u, d0, d1, d2, emit, order, pi0, pi1, pi2, grid, out):
    """Simulate one stationary path per ``u[r]`` and filter it on the fly.

    ``out[r, k]`` receives ``D^order log p(z_1^{grid[k]})`` for replica ``r``;
    ``grid`` must be increasing with ``grid[-1] <= u.shape[1]``.
    """
    s = d0.shape[0]
    v0 = np.empty(s)
    w1 = np.empty(s)
    w2 = np.empty(s)
    u0 = np.empty(s)
    u1 = np.empty(s)
    u2 = np.empty(s)
    acc = np.zeros(1)
    comp = np.zeros(1)
    for r in range(u.shape[0]):
        for j in range(s):
            v0[j] = pi0[j]
            w1[j] = pi1[j]
            w2[j] = pi2[j]
        acc[0] = 0.0
        comp[0] = 0.0
        y = -1
        k = 0
        for t in range(grid[-1]):
            if y < 0:
                y = _draw(cum_pi, u[r, t, 0])
            else:
                y = _draw(cum_delta[y], u[r, t, 0])
            zt = _draw(cum_emit[y], u[r, t, 1])
            f0 = 0.0
            f1 = 0.0
            f2 = 0.0
            for j in range(s):
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                for i in range(s):
                    a0 += v0[i] * d0[i, j]
                    if order >= 1:
                        a1 += w1[i] * d0[i, j] + v0[i] * d1[i, j]
                    if order >= 2:
                        a2 += w2[i] * d0[i, j] + 2.0 * w1[i] * d1[i, j] + v0[i] * d2[i, j]
                e = emit[j, zt]
                u0[j] = a0 * e
                u1[j] = a1 * e
                u2[j] = a2 * e
                f0 += u0[j]
                f1 += u1[j]
                f2 += u2[j]
            g1 = f1 / f0
            for j in range(s):
                v0[j] = u0[j] / f0
            if order >= 1:
                for j in range(s):
                    w1[j] = (u1[j] - v0[j] * f1) / f0
            if order >= 2:
                for j in range(s):
                    w2[j] = (u2[j] - 2.0 * w1[j] * f1 - v0[j] * f2) / f0
            inc0 = np.log(f0)
            inc2 = f2 / f0 - g1 * g1
            if order == 0:
                _kahan(acc, comp, 0, inc0)
            elif order == 1:
                _kahan(acc, comp, 0, g1)
            else:
                _kahan(acc, comp, 0, inc2)
            if t + 1 == grid[k]:
                out[r, k] = acc[0]
                k += 1


@njit(cache=True, nogil=True)
def expected_increments(d0, d1, d2, emit, true_delta, z, order, v0, w1, w2, vt, acc, comp):
    """Accumulate ``E_θ0[D^l log p^θ(Z_t | z_1^{t-1})]`` along the path ``z``.

    The θ filter (``v0``, ``w1``, ``w2``) supplies the increment for every
    possible next symbol; the θ0 filter ``vt`` supplies the predictive weights.
    Both filters are then advanced with the observed symbol.
    """
    s = d0.shape[0]
    m = emit.shape[1]
    a0 = np.empty(s)
    a1 = np.empty(s)
    a2 = np.empty(s)
    at = np.empty(s)
    for t in range(z.shape[0]):
        for j in range(s):
            x0 = 0.0
            x1 = 0.0
            x2 = 0.0
            xt = 0.0
            for i in range(s):
                x0 += v0[i] * d0[i, j]
                xt += vt[i] * true_delta[i, j]
                if order >= 1:
                    x1 += w1[i] * d0[i, j] + v0[i] * d1[i, j]
                if order >= 2:
                    x2 += w2[i] * d0[i, j] + 2.0 * w1[i] * d1[i, j] + v0[i] * d2[i, j]
            a0[j] = x0
            a1[j] = x1
            a2[j] = x2
            at[j] = xt
        e0 = 0.0
        e1 = 0.0
        e2 = 0.0
        for k in range(m):
            f0 = 0.0
            f1 = 0.0
            f2 = 0.0
            pt = 0.0
            for j in range(s):
                f0 += a0[j] * emit[j, k]
                f1 += a1[j] * emit[j, k]
                f2 += a2[j] * emit[j, k]
                pt += at[j] * emit[j, k]
            g1 = f1 / f0
            e0 += pt * np.log(f0)
            e1 += pt * g1
            e2 += pt * (f2 / f0 - g1 * g1)
        _kahan(acc, comp, 0, e0)
        _kahan(acc, comp, 1, e1)
        _kahan(acc, comp, 2, e2)
        zt = z[t]
        f0 = 0.0
        f1 = 0.0
        f2 = 0.0
        ft = 0.0
        for j in range(s):
            f0 += a0[j] * emit[j, zt]
            f1 += a1[j] * emit[j, zt]
            f2 += a2[j] * emit[j, zt]
            ft += at[j] * emit[j, zt]
        for j in range(s):
            e = emit[j, zt]
            v0[j] = a0[j] * e / f0
            vt[j] = at[j] * e / ft
        if order >= 1:
            for j in range(s):
                w1[j] = (a1[j] * emit[j, zt] - v0[j] * f1) / f0
        if order >= 2:
            for j in range(s):
                w2[j] = (a2[j] * emit[j, zt] - 2.0 * w1[j] * f1 - v0[j] * f2) / f0
