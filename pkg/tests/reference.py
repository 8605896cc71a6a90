"""Independent reference computations used as test oracles.

Everything here is deliberately written in plain scalar arithmetic or
brute-force loops, sharing no code with the package, so that agreement is
meaningful evidence of correctness.
"""
import itertools

import numpy as np


def hand_recursion_scalar(A, B1, B0, Abar, Bbar1, Bbar0, sw, p, Q, R, PT, N):
    """Backward recursion for a single scalar subsystem (n=1, m0=m1=1),
    written entry-by-entry with plain floats.

    R is a 2x2 array-like [[r00, r01], [r01, r11]] over inputs (u0, u1).
    Returns dict with lists P, H, L (stacked family, full two-input
    feedback), P_sub, H_sub, L_sub (subsystem family, local input only),
    all of length N+2, plus the gains khat (2-entry lists on xhat) and
    ktilde (scalar on xtilde, from the subsystem family).
    """
    r00, r01, r11 = R[0][0], R[0][1], R[1][1]
    P = [0.0] * (N + 2)
    H = [0.0] * (N + 2)
    Lv = [0.0] * (N + 2)
    # second family over the subsystem alone (local input only)
    Ps = [0.0] * (N + 2)
    Hs = [0.0] * (N + 2)
    Ls = [0.0] * (N + 2)
    P[N + 1] = H[N + 1] = Lv[N + 1] = PT
    Ps[N + 1] = Hs[N + 1] = Ls[N + 1] = PT
    khat = [None] * (N + 1)
    ktilde = [0.0] * (N + 1)
    for k in range(N, -1, -1):
        P1, L1 = P[k + 1], Lv[k + 1]
        # 2x2 Lambda = R + B' P B + sw Bbar' L Bbar over inputs (u0, u1)
        lam00 = r00 + B0 * P1 * B0 + sw * Bbar0 * L1 * Bbar0
        lam01 = r01 + B0 * P1 * B1 + sw * Bbar0 * L1 * Bbar1
        lam11 = r11 + B1 * P1 * B1 + sw * Bbar1 * L1 * Bbar1
        psi0 = B0 * P1 * A + sw * Bbar0 * L1 * Abar
        psi1 = B1 * P1 * A + sw * Bbar1 * L1 * Abar
        det = lam00 * lam11 - lam01 * lam01
        # Psi' Lambda^{-1} Psi (scalar since n = 1)
        quad = (lam11 * psi0 * psi0 - 2 * lam01 * psi0 * psi1
                + lam00 * psi1 * psi1) / det
        P[k] = Q + A * P1 * A + sw * Abar * L1 * Abar - quad
        khat[k] = [-(lam11 * psi0 - lam01 * psi1) / det,
                   -(lam00 * psi1 - lam01 * psi0) / det]
        lam00t = r00 + B0 * L1 * B0 + sw * Bbar0 * L1 * Bbar0
        lam01t = r01 + B0 * L1 * B1 + sw * Bbar0 * L1 * Bbar1
        lam11t = r11 + B1 * L1 * B1 + sw * Bbar1 * L1 * Bbar1
        psi0t = B0 * L1 * A + sw * Bbar0 * L1 * Abar
        psi1t = B1 * L1 * A + sw * Bbar1 * L1 * Abar
        dett = lam00t * lam11t - lam01t * lam01t
        quadt = (lam11t * psi0t * psi0t - 2 * lam01t * psi0t * psi1t
                 + lam00t * psi1t * psi1t) / dett
        H[k] = Q + A * L1 * A + sw * Abar * L1 * Abar - quadt
        Lv[k] = p * P[k] + (1 - p) * H[k]
        # subsystem family: local input only, weight r11
        Ps1, Ls1 = Ps[k + 1], Ls[k + 1]
        pi = r11 + B1 * Ps1 * B1 + sw * Bbar1 * Ls1 * Bbar1
        om = B1 * Ps1 * A + sw * Bbar1 * Ls1 * Abar
        pit = r11 + B1 * Ls1 * B1 + sw * Bbar1 * Ls1 * Bbar1
        omt = B1 * Ls1 * A + sw * Bbar1 * Ls1 * Abar
        Ps[k] = Q + A * Ps1 * A + sw * Abar * Ls1 * Abar - om * om / pi
        Hs[k] = Q + A * Ls1 * A + sw * Abar * Ls1 * Abar - omt * omt / pit
        Ls[k] = p * Ps[k] + (1 - p) * Hs[k]
        ktilde[k] = -omt / pit
    return {"P": P, "H": H, "L": Lv, "khat": khat, "ktilde": ktilde,
            "P_sub": Ps, "H_sub": Hs, "L_sub": Ls}


def quadrature_cost(coeffs, khat, ktilde, N, npts=13):
    """Expected closed-loop cost of a scalar instance (n=1, m0=m1=1) by
    Gauss-Hermite quadrature over all Gaussian draws and exhaustive
    enumeration of the arrival bits.  Exact for the quadratic integrand up
    to quadrature truncation of the products (npts is generous).

    coeffs: dict with A, B1, B0, Abar, Bbar1, Bbar0, sw, p, Q, R (2x2),
    PT, mu, Sx0, Sv.  khat[k] is the 2-entry remote gain, ktilde[k] the
    scalar error gain.
    """
    c = coeffs
    x, wq = np.polynomial.hermite_e.hermegauss(npts)
    wq = wq / np.sqrt(2 * np.pi)
    ndims = 1 + 2 * (N + 1)   # z0, then (w_k, v_k) per step
    grids = np.meshgrid(*([x] * ndims), indexing="ij")
    W = wq
    for _ in range(ndims - 1):
        W = np.multiply.outer(W, wq)
    z0, rest = grids[0], grids[1:]
    s0, sv, sw_std = np.sqrt(c["Sx0"]), np.sqrt(c["Sv"]), np.sqrt(c["sw"])
    R = c["R"]
    total = 0.0
    for bits in itertools.product([0, 1], repeat=N + 1):
        prob = 1.0
        for b in bits:
            prob *= c["p"] if b else 1.0 - c["p"]
        x0 = c["mu"] + s0 * z0
        xh = bits[0] * x0 + (1 - bits[0]) * c["mu"]
        xk = x0
        J = 0.0
        for k in range(N + 1):
            xt = xk - xh
            u0 = khat[k][0] * xh
            u1 = khat[k][1] * xh + ktilde[k] * xt
            J = J + (c["Q"] * xk * xk + R[0][0] * u0 * u0
                     + 2 * R[0][1] * u0 * u1 + R[1][1] * u1 * u1)
            w = sw_std * rest[2 * k]
            v = sv * rest[2 * k + 1]
            xn = ((c["A"] + w * c["Abar"]) * xk + (c["B1"] + w * c["Bbar1"]) * u1
                  + (c["B0"] + w * c["Bbar0"]) * u0 + v)
            uh1 = khat[k][1] * xh
            pred = c["A"] * xh + c["B1"] * uh1 + c["B0"] * u0
            gn = bits[k + 1] if k + 1 <= N else 0
            if k + 1 <= N:
                xh = gn * xn + (1 - gn) * pred
            xk = xn
        J = J + c["PT"] * xk * xk
        total += prob * float(np.sum(W * J))
    return total


def place_blocks_by_loop(subsystem_mats, n_offsets, NL):
    """Brute-force block-diagonal placement via explicit index arithmetic."""
    M = np.zeros((NL, NL))
    for i, mat in enumerate(subsystem_mats):
        for a in range(mat.shape[0]):
            for b in range(mat.shape[1]):
                M[n_offsets[i] + a, n_offsets[i] + b] = mat[a, b]
    return M
