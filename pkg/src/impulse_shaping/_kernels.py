"""Compiled inner loops for the Riccati flows and the stochastic filters.

Matrices are passed as stacks indexed by control interval: ``A[k]`` is held
for ``stride`` consecutive RK4 steps.  ``sa`` is the sign of the drift term
(+1 forward, -1 backward) and ``sn`` the sign of the cross term in the gain
(-1 forward, +1 backward).

Status codes: 0 ok, 1 non-finite value, 2 PSD violation, 3 not settled.
"""

import numpy as np
from numba import njit

OK = 0
NONFINITE = 1
NOT_PSD = 2
NOT_SETTLED = 3


@njit(cache=True, nogil=True, inline="always")
def riccati_rhs(S, A, C, Q, N, eta, sa, sn, out, G, Ge):
    d = S.shape[0]
    m = C.shape[0]
    # gain G = S C^T + sn N^T  (d x m), Ge = G eta
    for i in range(d):
        for j in range(m):
            acc = sn * N[j, i]
            for l in range(d):
                acc += S[i, l] * C[j, l]
            G[i, j] = acc
    for i in range(d):
        for j in range(m):
            acc = 0.0
            for l in range(m):
                acc += G[i, l] * eta[l, j]
            Ge[i, j] = acc
    for i in range(d):
        for j in range(i, d):
            acc = Q[i, j]
            for l in range(d):
                acc += sa * (A[i, l] * S[l, j] + S[i, l] * A[j, l])
            for l in range(m):
                acc -= Ge[i, l] * G[j, l]
            out[i, j] = acc
            out[j, i] = acc


@njit(cache=True, nogil=True, inline="always")
def min_eig(S):
    d = S.shape[0]
    if d == 1:
        return S[0, 0]
    if d == 2:
        a = S[0, 0]
        c = S[1, 1]
        b = S[0, 1]
        h = 0.5 * (a - c)
        return 0.5 * (a + c) - np.sqrt(h * h + b * b)
    return np.linalg.eigvalsh(S)[0]


@njit(cache=True, nogil=True)
def _project_psd(S, tol_psd):
    """Clip round-off negative eigenvalues; return False on a genuine violation."""
    d = S.shape[0]
    tr = 0.0
    for i in range(d):
        tr += S[i, i]
    floor = -tol_psd * max(abs(tr) / d, 1.0)
    lam = min_eig(S)
    if lam >= 0.0:
        return True
    if lam < floor:
        return False
    w, V = np.linalg.eigh(S)
    for i in range(d):
        if w[i] < 0.0:
            w[i] = 0.0
    R = (V * w) @ V.T
    for i in range(d):
        for j in range(d):
            S[i, j] = 0.5 * (R[i, j] + R[j, i])
    return True


@njit(cache=True, nogil=True, inline="always")
def _rk4_step(S, A, C, Q, N, eta, h, sa, sn, k1, k2, k3, k4, tmp, G, Ge):
    d = S.shape[0]
    riccati_rhs(S, A, C, Q, N, eta, sa, sn, k1, G, Ge)
    for i in range(d):
        for j in range(d):
            tmp[i, j] = S[i, j] + 0.5 * h * k1[i, j]
    riccati_rhs(tmp, A, C, Q, N, eta, sa, sn, k2, G, Ge)
    for i in range(d):
        for j in range(d):
            tmp[i, j] = S[i, j] + 0.5 * h * k2[i, j]
    riccati_rhs(tmp, A, C, Q, N, eta, sa, sn, k3, G, Ge)
    for i in range(d):
        for j in range(d):
            tmp[i, j] = S[i, j] + h * k3[i, j]
    riccati_rhs(tmp, A, C, Q, N, eta, sa, sn, k4, G, Ge)
    for i in range(d):
        for j in range(d):
            tmp[i, j] = S[i, j] + h / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
    finite = True
    for i in range(d):
        for j in range(d):
            v = 0.5 * (tmp[i, j] + tmp[j, i])
            S[i, j] = v
            if not np.isfinite(v):
                finite = False
    return finite


@njit(cache=True, nogil=True)
def rk4_sweep(S0, A, C, Q, N, eta, stride, h, sa, sn, tol_psd, traj):
    """Integrate over all control intervals in index order.

    If ``traj`` has a leading dimension of ``K*stride + 1`` every node is
    stored there; pass a ``(0, d, d)`` array to skip storage.  Returns
    ``(S_final, status, step)``.
    """
    d = S0.shape[0]
    S = S0.copy()
    k1 = np.empty((d, d))
    k2 = np.empty((d, d))
    k3 = np.empty((d, d))
    k4 = np.empty((d, d))
    tmp = np.empty((d, d))
    G = np.empty((d, C.shape[1]))
    Ge = np.empty((d, C.shape[1]))
    store = traj.shape[0] > 0
    if store:
        traj[0] = S
    step = 0
    for k in range(A.shape[0]):
        Ak, Ck, Qk, Nk, ek = A[k], C[k], Q[k], N[k], eta[k]
        for _ in range(stride):
            if not _rk4_step(S, Ak, Ck, Qk, Nk, ek, h, sa, sn, k1, k2, k3, k4, tmp, G, Ge):
                return S, NONFINITE, step
            if not _project_psd(S, tol_psd):
                return S, NOT_PSD, step
            step += 1
            if store:
                traj[step] = S
    return S, OK, step


@njit(cache=True, nogil=True)
def settle(S0, A, C, Q, N, eta, h, sa, sn, tol_ss, time_scale, max_steps, tol_psd):
    """Run the autonomous flow until ``|rhs| * time_scale < tol_ss (1 + |S|)``."""
    d = S0.shape[0]
    S = S0.copy()
    k1 = np.empty((d, d))
    k2 = np.empty((d, d))
    k3 = np.empty((d, d))
    k4 = np.empty((d, d))
    tmp = np.empty((d, d))
    r = np.empty((d, d))
    G = np.empty((d, C.shape[0]))
    Ge = np.empty((d, C.shape[0]))
    for step in range(max_steps + 1):
        riccati_rhs(S, A, C, Q, N, eta, sa, sn, r, G, Ge)
        if np.sqrt(np.sum(r * r)) * time_scale < tol_ss * (1.0 + np.sqrt(np.sum(S * S))):
            return S, OK, step
        if step == max_steps:
            break
        if not _rk4_step(S, A, C, Q, N, eta, h, sa, sn, k1, k2, k3, k4, tmp, G, Ge):
            return S, NONFINITE, step
        if not _project_psd(S, tol_psd):
            return S, NOT_PSD, step
    return S, NOT_SETTLED, max_steps


@njit(cache=True, nogil=True)
def euler_maruyama_record(x0, Phi, C, B, sqrt_eta, h, kick_step, kick, dw, dv):
    """Simulate the true state and measurement increments.

    ``Phi`` holds the drift propagator ``exp(A h)`` of every integrator step;
    ``C``, ``B`` and ``sqrt_eta`` are stacked the same way.  ``dw`` holds
    standard normals for the process noise and ``dv`` for the measurement
    noise, one row per step.  The kick is added to the state at node
    ``kick_step`` before the step leaving that node.  Returns the state at
    every node (node ``kick_step`` holds the pre-kick value) and the
    increments.
    """
    K = Phi.shape[0]
    d = x0.shape[0]
    m = C.shape[1]
    xs = np.empty((K + 1, d))
    dY = np.empty((K, m))
    x = x0.copy()
    xs[0] = x
    sh = np.sqrt(h)
    for k in range(K):
        if k == kick_step:
            x = x + kick
        y = sqrt_eta[k] @ (C[k] @ x)
        for j in range(m):
            dY[k, j] = y[j] * h + sh * dv[k, j]
        x = Phi[k] @ x + (B[k] @ dw[k]) * sh
        xs[k + 1] = x
    return xs, dY


@njit(cache=True, nogil=True)
def kalman_mean_forward(r0, Phi, C, sqrt_eta, gain_cov, N, h, dY):
    """``r <- Phi r + (S C^T - N^T) sqrt(eta) dnu`` with ``dnu = dY - sqrt(eta) C r h``."""
    K = dY.shape[0]
    d = r0.shape[0]
    rs = np.empty((K + 1, d))
    r = r0.copy()
    rs[0] = r
    for k in range(K):
        se = sqrt_eta[k]
        innov = dY[k] - se @ (C[k] @ r) * h
        G = gain_cov[k] @ C[k].T - N[k].T
        r = Phi[k] @ r + G @ (se @ innov)
        rs[k + 1] = r
    return rs


@njit(cache=True, nogil=True)
def kalman_mean_backward(rT, Phi_inv, C, sqrt_eta, gain_cov, N, h, dY):
    """Reverse-time update of the retrodicted mean.

    Each reverse step propagates the estimate to node ``k`` and then
    corrects it with the innovation of ``dY[k]``.  ``Phi_inv[k]`` is ``exp(-A h)`` of step ``k``; ``gain_cov[k]`` is the
    backward covariance at node ``k + 1``, the node the reverse step departs
    from; increment ``dY[k]`` spans ``[t_k, t_k+1]``.
    """
    K = dY.shape[0]
    d = rT.shape[0]
    rs = np.empty((K + 1, d))
    r = rT.copy()
    rs[K] = r
    for k in range(K - 1, -1, -1):
        se = sqrt_eta[k]
        # predict to node k first: dY[k] was generated by the state at node k
        r = Phi_inv[k] @ r
        innov = dY[k] - se @ (C[k] @ r) * h
        G = gain_cov[k] @ C[k].T + N[k].T
        r = r + G @ (se @ innov)
        rs[k] = r
    return rs


@njit(cache=True, nogil=True, inline="always")
def _rhs_adjoint(X, Lam, A, C, N, eta, sa, sn, out, G):
    """``(dF/dX)^T [Lam] = sa (A^T L + L A) - L G eta C - C^T eta G^T L`` for symmetric ``Lam``."""
    d = X.shape[0]
    m = C.shape[0]
    for i in range(d):
        for j in range(m):
            acc = sn * N[j, i]
            for l in range(d):
                acc += X[i, l] * C[j, l]
            G[i, j] = acc
    # W = eta C  (m x d); T = L G  (d x m)
    for i in range(d):
        for j in range(i, d):
            acc = 0.0
            for l in range(d):
                acc += sa * (A[l, i] * Lam[l, j] + Lam[i, l] * A[l, j])
            for a in range(m):
                lg_i = 0.0
                lg_j = 0.0
                for l in range(d):
                    lg_i += Lam[i, l] * G[l, a]
                    lg_j += Lam[j, l] * G[l, a]
                for b in range(m):
                    acc -= lg_i * eta[a, b] * C[b, j] + lg_j * eta[a, b] * C[b, i]
            out[i, j] = acc
            out[j, i] = acc


@njit(cache=True, nogil=True, inline="always")
def _param_pairing(X, Lam, A, C, N, eta, dA, dC, dQ, dN, deta, sa, sn, G, dG):
    """``<Lam, dF/dp>`` for matrix derivatives ``dA .. deta`` with respect to ``p``."""
    d = X.shape[0]
    m = C.shape[0]
    for i in range(d):
        for j in range(m):
            acc = sn * N[j, i]
            dacc = sn * dN[j, i]
            for l in range(d):
                acc += X[i, l] * C[j, l]
                dacc += X[i, l] * dC[j, l]
            G[i, j] = acc
            dG[i, j] = dacc
    total = 0.0
    for i in range(d):
        for j in range(d):
            f = dQ[i, j]
            for l in range(d):
                f += sa * (dA[i, l] * X[l, j] + X[i, l] * dA[j, l])
            for a in range(m):
                for b in range(m):
                    f -= dG[i, a] * eta[a, b] * G[j, b] + G[i, a] * eta[a, b] * dG[j, b]
                    f -= G[i, a] * deta[a, b] * G[j, b]
            total += Lam[i, j] * f
    return total


@njit(cache=True, nogil=True)
def rk4_adjoint(traj, A, C, Q, N, eta, dA, dC, dQ, dN, deta, stride, h, sa, sn, lam_end):
    """Reverse-mode derivative of an :func:`rk4_sweep` run.

    ``traj`` holds the stored nodes in integration order.  Returns the
    adjoint at the initial node and the derivative of the terminal pairing
    ``<lam_end, S_end>`` with respect to each interval's scalar control.
    """
    d = traj.shape[1]
    m = C.shape[1]
    K = A.shape[0]
    lam = lam_end.copy()
    grad = np.zeros(K)
    k1 = np.empty((d, d))
    k2 = np.empty((d, d))
    k3 = np.empty((d, d))
    X2 = np.empty((d, d))
    X3 = np.empty((d, d))
    X4 = np.empty((d, d))
    b1 = np.empty((d, d))
    b2 = np.empty((d, d))
    b3 = np.empty((d, d))
    b4 = np.empty((d, d))
    adj = np.empty((d, d))
    G = np.empty((d, m))
    Ge = np.empty((d, m))
    dG = np.empty((d, m))
    step = K * stride
    for k in range(K - 1, -1, -1):
        Ak, Ck, Qk, Nk, ek = A[k], C[k], Q[k], N[k], eta[k]
        dAk, dCk, dQk, dNk, dek = dA[k], dC[k], dQ[k], dN[k], deta[k]
        g = 0.0
        for _ in range(stride):
            step -= 1
            S0 = traj[step]
            # recompute stage inputs
            riccati_rhs(S0, Ak, Ck, Qk, Nk, ek, sa, sn, k1, G, Ge)
            for i in range(d):
                for j in range(d):
                    X2[i, j] = S0[i, j] + 0.5 * h * k1[i, j]
            riccati_rhs(X2, Ak, Ck, Qk, Nk, ek, sa, sn, k2, G, Ge)
            for i in range(d):
                for j in range(d):
                    X3[i, j] = S0[i, j] + 0.5 * h * k2[i, j]
            riccati_rhs(X3, Ak, Ck, Qk, Nk, ek, sa, sn, k3, G, Ge)
            for i in range(d):
                for j in range(d):
                    X4[i, j] = S0[i, j] + h * k3[i, j]
            # stage cotangents
            for i in range(d):
                for j in range(d):
                    b4[i, j] = h / 6.0 * lam[i, j]
                    b3[i, j] = h / 3.0 * lam[i, j]
                    b2[i, j] = h / 3.0 * lam[i, j]
                    b1[i, j] = h / 6.0 * lam[i, j]
            g += _param_pairing(X4, b4, Ak, Ck, Nk, ek, dAk, dCk, dQk, dNk, dek, sa, sn, G, dG)
            _rhs_adjoint(X4, b4, Ak, Ck, Nk, ek, sa, sn, adj, G)
            for i in range(d):
                for j in range(d):
                    lam[i, j] += adj[i, j]
                    b3[i, j] += h * adj[i, j]
            g += _param_pairing(X3, b3, Ak, Ck, Nk, ek, dAk, dCk, dQk, dNk, dek, sa, sn, G, dG)
            _rhs_adjoint(X3, b3, Ak, Ck, Nk, ek, sa, sn, adj, G)
            for i in range(d):
                for j in range(d):
                    lam[i, j] += adj[i, j]
                    b2[i, j] += 0.5 * h * adj[i, j]
            g += _param_pairing(X2, b2, Ak, Ck, Nk, ek, dAk, dCk, dQk, dNk, dek, sa, sn, G, dG)
            _rhs_adjoint(X2, b2, Ak, Ck, Nk, ek, sa, sn, adj, G)
            for i in range(d):
                for j in range(d):
                    lam[i, j] += adj[i, j]
                    b1[i, j] += 0.5 * h * adj[i, j]
            g += _param_pairing(S0, b1, Ak, Ck, Nk, ek, dAk, dCk, dQk, dNk, dek, sa, sn, G, dG)
            _rhs_adjoint(S0, b1, Ak, Ck, Nk, ek, sa, sn, adj, G)
            for i in range(d):
                for j in range(d):
                    lam[i, j] += adj[i, j]
            for i in range(d):
                for j in range(i + 1, d):
                    v = 0.5 * (lam[i, j] + lam[j, i])
                    lam[i, j] = v
                    lam[j, i] = v
        grad[k] = g
    return lam, grad
