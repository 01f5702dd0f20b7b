"""Pure-Python implementations of the hot loops.

These mirror ``_ckernels.pyx`` function for function and are used whenever the
compiled extension is unavailable (or ``SAFEMPC_PURE_PYTHON=1`` is set).
Status codes: 0 = ok, 1 = vx <= 0, 2 = 1 - kappa*e_y == 0.
"""
import math

import numpy as np

OK = 0
BAD_VX = 1
BAD_CURVATURE = 2


def pacejka(D, C, B, alpha):
    return 2.0 * D * math.sin(C * math.atan(B * alpha))


def vehicle_euler(p, x, a, delta, kappa, dt):
    """One explicit-Euler step of the curvilinear lateral vehicle model.

    ``p`` is ``(m, Iz, lf, lr, Bf, Br, Cf, Cr, Df, Dr)``; ``x`` is
    ``(vx, vy, phi, e_phi, s, e_y)``. Returns ``(new_state_tuple, status)``.
    """
    m, Iz, lf, lr, Bf, Br, Cf, Cr, Df, Dr = p
    vx, vy, phi, e_phi, s, e_y = x
    if not vx > 0.0:
        return tuple(x), BAD_VX
    denom = 1.0 - kappa * e_y
    if denom == 0.0:
        return tuple(x), BAD_CURVATURE
    alpha_f = delta - math.atan((vy + lf * phi) / vx)
    alpha_r = -math.atan((vy - lf * phi) / vx)
    fyf = 2.0 * Df * math.sin(Cf * math.atan(Bf * alpha_f))
    fyr = 2.0 * Dr * math.sin(Cr * math.atan(Br * alpha_r))
    cd = math.cos(delta)
    ce = math.cos(e_phi)
    se = math.sin(e_phi)
    s_dot = (vx * ce - vy * se) / denom
    return (
        vx + dt * (a - fyf * math.sin(delta) / m + phi * vy),
        vy + dt * ((fyf * cd + fyr) / m - phi * vx),
        phi + dt * (lf * fyf * cd - lr * fyr) / Iz,
        e_phi + dt * (phi - s_dot * kappa),
        s + dt * s_dot,
        e_y + dt * (vx * se + vy * ce),
    ), OK


def segment_index(seg_ends, length, s):
    s_mod = s % length
    lo, hi = 0, len(seg_ends) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if s_mod < seg_ends[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def vehicle_integrate(p, x, a, delta, seg_ends, seg_kappa, length, dt, nsteps):
    """Integrate ``nsteps`` Euler substeps under a held input on a piecewise-constant-curvature track.

    Returns ``(traj, status, n_done)``, ``traj`` having one row per completed substep.
    """
    traj = np.empty((nsteps, 6))
    state = tuple(float(v) for v in x)
    seg_ends = [float(v) for v in seg_ends]
    kappas = [float(v) for v in seg_kappa]
    for i in range(nsteps):
        kappa = kappas[segment_index(seg_ends, length, state[4])]
        state, status = vehicle_euler(p, state, a, delta, kappa, dt)
        if status != OK:
            return traj[:i], status, i
        traj[i] = state
    return traj, OK, nsteps


def mark_reachable(A, B, x0, useqs, x_lo, x_hi, dims, g_lo, g_hi, counts):
    """Roll every input sequence out through ``x+ = A x + B u`` and mark final-state cells.

    Sequences whose intermediate or final states leave the box ``[x_lo, x_hi]``
    are discarded. Returns a ``uint8`` array of shape ``counts``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    useqs = np.asarray(useqs, dtype=float)
    n_seq, k = useqs.shape[0], useqs.shape[1]
    grid = np.zeros((int(counts[0]), int(counts[1])), dtype=np.uint8)
    X = np.tile(np.asarray(x0, dtype=float), (n_seq, 1))
    alive = np.ones(n_seq, dtype=bool)
    for j in range(k):
        X = X @ A.T + useqs[:, j, :] @ B.T
        alive &= np.all((X >= x_lo) & (X <= x_hi), axis=1)
    cells = []
    for d in range(2):
        v = X[:, dims[d]]
        width = (g_hi[d] - g_lo[d]) / counts[d]
        idx = np.floor((v - g_lo[d]) / width).astype(np.int64)
        idx[v == g_hi[d]] = counts[d] - 1
        alive &= (idx >= 0) & (idx < counts[d])
        cells.append(idx)
    grid[cells[0][alive], cells[1][alive]] = 1
    return grid
