"""Compiled inner loops for the implicit Euler integrator and the fast-system
Monte Carlo oracle.

These kernels are the only hot paths in the package; everything else is plain
numpy.  They are single-threaded and release the GIL so that trajectories can
run concurrently from a thread pool, one kernel call per noise chunk.  State
vectors are advanced in place; strided saves are written into a caller-owned
output array.  A nonnegative return in the failure slot is the 1-based global
index of the first step that produced a non-finite state.
"""

import numpy as np
from numba import njit

# Chunked noise generation: fixed so that trajectories are bit-reproducible
# regardless of how the caller phases its loop.
CHUNK_STEPS = 131072


@njit(cache=True, nogil=True)
def be_chunk_full(state, dW, dt, epsT, eps, Pa, P2, sx, sy, delta,
                  stride, step0, out, out_row, res_stride, res_acc):
    """Backward Euler steps of the 5-dim model, asymptotic predictor plus one
    Newton step with the analytic Jacobian (direct 5x5 elimination)."""
    cx = sx / np.sqrt(epsT)
    cv = np.sqrt(2.0 / eps)
    J = np.empty((5, 5))
    g = np.empty(5)
    x, y, v, T, S = state[0], state[1], state[2], state[3], state[4]
    n = dW.shape[0]
    fail = -1
    for i in range(n):
        rx = x + cx * dW[i, 0]
        ry = y + sy * dW[i, 1]
        rv = v + cv * dW[i, 2]
        rT = T
        rS = S
        # predictor: rhs + dt * b(rhs), an O(dt)-accurate solution of the
        # implicit relation
        q = delta + Pa * (rx - ry) ** 2
        b1 = -(rx - 1.0) / epsT - q * rx + 4.0 * rv * rT
        b2 = 1.0 - q * ry + 4.0 * rv * rS
        b3 = -rv / eps
        b4 = -(rT + 2.0 * P2 * rv * rx) / eps
        b5 = -(rS + 2.0 * P2 * rv * ry) / eps
        px = rx + dt * b1
        py = ry + dt * b2
        pv = rv + dt * b3
        pT = rT + dt * b4
        pS = rS + dt * b5
        # one Newton step on G(X) = X - dt b(X) - rhs
        q = delta + Pa * (px - py) ** 2
        b1 = -(px - 1.0) / epsT - q * px + 4.0 * pv * pT
        b2 = 1.0 - q * py + 4.0 * pv * pS
        b3 = -pv / eps
        b4 = -(pT + 2.0 * P2 * pv * px) / eps
        b5 = -(pS + 2.0 * P2 * pv * py) / eps
        dq = 2.0 * Pa * (px - py)
        J[0, 0] = 1.0 - dt * (-1.0 / epsT - q - dq * px)
        J[0, 1] = -dt * (dq * px)
        J[0, 2] = -dt * (4.0 * pT)
        J[0, 3] = -dt * (4.0 * pv)
        J[0, 4] = 0.0
        J[1, 0] = -dt * (-dq * py)
        J[1, 1] = 1.0 - dt * (-q + dq * py)
        J[1, 2] = -dt * (4.0 * pS)
        J[1, 3] = 0.0
        J[1, 4] = -dt * (4.0 * pv)
        J[2, 0] = 0.0
        J[2, 1] = 0.0
        J[2, 2] = 1.0 + dt / eps
        J[2, 3] = 0.0
        J[2, 4] = 0.0
        J[3, 0] = dt * (2.0 * P2 * pv) / eps
        J[3, 1] = 0.0
        J[3, 2] = dt * (2.0 * P2 * px) / eps
        J[3, 3] = 1.0 + dt / eps
        J[3, 4] = 0.0
        J[4, 0] = 0.0
        J[4, 1] = dt * (2.0 * P2 * pv) / eps
        J[4, 2] = dt * (2.0 * P2 * py) / eps
        J[4, 3] = 0.0
        J[4, 4] = 1.0 + dt / eps
        g[0] = px - dt * b1 - rx
        g[1] = py - dt * b2 - ry
        g[2] = pv - dt * b3 - rv
        g[3] = pT - dt * b4 - rT
        g[4] = pS - dt * b5 - rS
        # solve J d = g by Gaussian elimination with partial pivoting
        singular = False
        for c in range(4):
            piv = c
            mx = abs(J[c, c])
            for r in range(c + 1, 5):
                if abs(J[r, c]) > mx:
                    mx = abs(J[r, c])
                    piv = r
            if mx == 0.0:
                singular = True
                break
            if piv != c:
                for k in range(c, 5):
                    tmp = J[c, k]
                    J[c, k] = J[piv, k]
                    J[piv, k] = tmp
                tmp = g[c]
                g[c] = g[piv]
                g[piv] = tmp
            for r in range(c + 1, 5):
                f = J[r, c] / J[c, c]
                for k in range(c + 1, 5):
                    J[r, k] -= f * J[c, k]
                g[r] -= f * g[c]
        if singular or J[4, 4] == 0.0:
            fail = step0 + i + 1
            break
        for c in range(4, -1, -1):
            acc = g[c]
            for k in range(c + 1, 5):
                acc -= J[c, k] * g[k]
            g[c] = acc / J[c, c]
        x = px - g[0]
        y = py - g[1]
        v = pv - g[2]
        T = pT - g[3]
        S = pS - g[4]
        if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(v)
                and np.isfinite(T) and np.isfinite(S)):
            fail = step0 + i + 1
            break
        step = step0 + i + 1
        if res_stride > 0 and step % res_stride == 0:
            q = delta + Pa * (x - y) ** 2
            b1 = -(x - 1.0) / epsT - q * x + 4.0 * v * T
            b2 = 1.0 - q * y + 4.0 * v * S
            b3 = -v / eps
            b4 = -(T + 2.0 * P2 * v * x) / eps
            b5 = -(S + 2.0 * P2 * v * y) / eps
            r = abs(x - dt * b1 - rx)
            r = max(r, abs(y - dt * b2 - ry))
            r = max(r, abs(v - dt * b3 - rv))
            r = max(r, abs(T - dt * b4 - rT))
            r = max(r, abs(S - dt * b5 - rS))
            if r > res_acc[0]:
                res_acc[0] = r
        if step % stride == 0:
            out[out_row, 0] = x
            out[out_row, 1] = y
            out[out_row, 2] = v
            out[out_row, 3] = T
            out[out_row, 4] = S
            out_row += 1
    state[0], state[1], state[2], state[3], state[4] = x, y, v, T, S
    return out_row, fail


@njit(cache=True, nogil=True)
def be_chunk_reduced(state, dW, dt, epsT, Pa, P2, sx, sy, delta, amp, niter,
                     stride, step0, out, out_row, res_stride, res_acc):
    """Backward Euler steps of the 2-dim reduced models via fixed-point
    iteration started at the current state.

    ``amp`` is the multiplicative eddy-noise coefficient 4*sqrt(5*eps)*P^2;
    zero selects the averaged model (dW has 2 columns), positive the
    gaussian model (dW has 3 columns, the shared channel last).  The
    multiplicative column is evaluated at the pre-step state (Ito).
    """
    cx = sx / np.sqrt(epsT)
    x, y = state[0], state[1]
    n = dW.shape[0]
    fail = -1
    for i in range(n):
        rx = x + cx * dW[i, 0]
        ry = y + sy * dW[i, 1]
        if amp > 0.0:
            rx += amp * x * dW[i, 2]
            ry += amp * y * dW[i, 2]
        xx = x
        yy = y
        for _ in range(niter):
            q = delta + Pa * (xx - yy) ** 2
            b1 = -(xx - 1.0) / epsT - q * xx - 4.0 * P2 * xx
            b2 = 1.0 - q * yy - 4.0 * P2 * yy
            xx = rx + dt * b1
            yy = ry + dt * b2
        x = xx
        y = yy
        if not (np.isfinite(x) and np.isfinite(y)):
            fail = step0 + i + 1
            break
        step = step0 + i + 1
        if res_stride > 0 and step % res_stride == 0:
            q = delta + Pa * (x - y) ** 2
            b1 = -(x - 1.0) / epsT - q * x - 4.0 * P2 * x
            b2 = 1.0 - q * y - 4.0 * P2 * y
            r = max(abs(x - dt * b1 - rx), abs(y - dt * b2 - ry))
            if r > res_acc[0]:
                res_acc[0] = r
        if step % stride == 0:
            out[out_row, 0] = x
            out[out_row, 1] = y
            out_row += 1
    state[0], state[1] = x, y
    return out_row, fail


@njit(cache=True, nogil=True)
def fast_traj_stats(y0, dW, dt, eps, P2, x, y, sig, save_every, n_lags,
                    f_buf, out):
    """Simulate the frozen-(x, y) fast subsystem (Euler-Maruyama) and reduce
    one trajectory to eddy-flux statistics.

    Records f = (4vT + 4 P^2 x, 4vS + 4 P^2 y) every `save_every` steps
    (including the initial sample), then accumulates the symmetrized lagged
    autocovariance over a fixed origin window and integrates it over lags by
    the trapezoid rule, scaled by 1/eps so the result is the diffusion
    correction on the slow time scale.  `y0` is advanced in place to the
    final state.

    out layout: [flux_v_T, flux_v_S, C11, C12, C22,
                 mean f1 first half, second half, mean f2 first half, second half]
    """
    v, T, S = y0[0], y0[1], y0[2]
    cv = np.sqrt(2.0 * dt / eps)
    cT = np.sqrt(2.0 * dt / eps) * sig
    ax = 2.0 * P2 * x
    ay = 2.0 * P2 * y
    n = dW.shape[0]
    n_save = n // save_every + 1
    f_buf[0, 0] = 4.0 * v * T + 4.0 * P2 * x
    f_buf[0, 1] = 4.0 * v * S + 4.0 * P2 * y
    row = 1
    for i in range(n):
        vn = v - (dt / eps) * v + cv * dW[i, 0]
        Tn = T - (dt / eps) * (T + ax * v) + cT * dW[i, 1]
        Sn = S - (dt / eps) * (S + ay * v) + cT * dW[i, 2]
        v, T, S = vn, Tn, Sn
        if (i + 1) % save_every == 0:
            f_buf[row, 0] = 4.0 * v * T + 4.0 * P2 * x
            f_buf[row, 1] = 4.0 * v * S + 4.0 * P2 * y
            row += 1
    y0[0], y0[1], y0[2] = v, T, S

    m1 = 0.0
    m2 = 0.0
    for t in range(n_save):
        m1 += f_buf[t, 0]
        m2 += f_buf[t, 1]
    m1 /= n_save
    m2 /= n_save
    out[0] = m1 - 4.0 * P2 * x
    out[1] = m2 - 4.0 * P2 * y

    # symmetrized lagged autocovariance over a fixed origin window,
    # trapezoid in the lag, 1/eps rescaling to the fast time scale
    m_orig = n_save - n_lags
    dlag = save_every * dt
    c11 = 0.0
    c12 = 0.0
    c22 = 0.0
    for k in range(n_lags + 1):
        r11 = 0.0
        r12 = 0.0
        r21 = 0.0
        r22 = 0.0
        for t in range(m_orig):
            r11 += f_buf[t + k, 0] * f_buf[t, 0]
            r12 += f_buf[t + k, 0] * f_buf[t, 1]
            r21 += f_buf[t + k, 1] * f_buf[t, 0]
            r22 += f_buf[t + k, 1] * f_buf[t, 1]
        w = 0.5 if (k == 0 or k == n_lags) else 1.0
        c11 += w * 2.0 * r11 / m_orig
        c12 += w * (r12 + r21) / m_orig
        c22 += w * 2.0 * r22 / m_orig
    scale = dlag / eps
    out[2] = c11 * scale
    out[3] = c12 * scale
    out[4] = c22 * scale

    half = n_save // 2
    a1 = 0.0
    a2 = 0.0
    b1 = 0.0
    b2 = 0.0
    for t in range(half):
        a1 += f_buf[t, 0]
        a2 += f_buf[t, 1]
    for t in range(half, n_save):
        b1 += f_buf[t, 0]
        b2 += f_buf[t, 1]
    out[5] = a1 / half
    out[6] = b1 / (n_save - half)
    out[7] = a2 / half
    out[8] = b2 / (n_save - half)
