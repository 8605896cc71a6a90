"""Gain synthesis and the closed-form optimal cost.

From a solved CRE the control law is

    u_k^0 = Sel_0 @ Uhat_k,      u_k^i = Sel_i @ Uhat_k + utilde_k^i,
    Uhat_k = Khat_k @ Xhat_k,    utilde_k^i = Ktilde_k^i @ xtilde_k^i,

with Khat_k = -Lambda_k^{-1} Psi_k acting on the remote estimate and the
local error gains Ktilde_k^i = -(PiTilde_k^i)^{-1} OmegaTilde_k^i.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ValidatedModel
from .riccati import (SingularLambda, SingularPi, solve_checked)


@dataclass
class GainSchedule:
    """Feedback gains for k = 0..N plus the input selector matrices."""

    N: int
    Khat: np.ndarray             # (N+1, M_L, N_L)
    Ktilde: list[np.ndarray]     # per subsystem, (N+1, m_i, n_i)
    Sel0: np.ndarray             # m_0 x M_L, extracts u^0 from U
    Sel: list[np.ndarray]        # m_i x M_L each
    n_offsets: list[int]
    m_offsets: list[int]

    @property
    def L(self):
        return len(self.Ktilde)

    @property
    def NL(self):
        return self.n_offsets[-1]

    @property
    def ML(self):
        return self.m_offsets[-1]

    def Ktilde_full(self, k):
        """The N_L-input error gain: Ktilde blocks on the (i, i) diagonal,
        zero rows for the remote input (which cannot see the error)."""
        K = np.zeros((self.ML, self.NL))
        for i in range(self.L):
            r = slice(self.m_offsets[i + 1], self.m_offsets[i + 2])
            c = slice(self.n_offsets[i], self.n_offsets[i + 1])
            K[r, c] = self.Ktilde[i][k]
        return K


def selectors(m_offsets):
    """Selector matrices Sel_0..Sel_L that split U into (u^0, u^1, ..., u^L)."""
    ML = m_offsets[-1]
    out = []
    for i in range(len(m_offsets) - 1):
        S = np.zeros((m_offsets[i + 1] - m_offsets[i], ML))
        S[:, m_offsets[i]:m_offsets[i + 1]] = np.eye(m_offsets[i + 1] - m_offsets[i])
        out.append(S)
    return out[0], out[1:]


def gains(sol):
    """Materialize the full gain schedule from a CRE solution."""
    N = sol.N
    Khat = np.zeros((N + 1, sol.ML, sol.NL))
    Ktilde = [np.zeros((N + 1,) + sol.OmegaTilde[i].shape[1:])
              for i in range(sol.L_count)]
    for k in range(N + 1):
        Khat[k] = -solve_checked(
            sol.Lambda[k], sol.Psi[k], lambda rc: SingularLambda(k, rc))
        for i in range(sol.L_count):
            Ktilde[i][k] = -solve_checked(
                sol.PiTilde[i][k], sol.OmegaTilde[i][k],
                lambda rc: SingularPi(k, i + 1, rc, tilde=True))
    Sel0, Sel = selectors(sol.m_offsets)
    return GainSchedule(N=N, Khat=Khat, Ktilde=Ktilde, Sel0=Sel0, Sel=Sel,
                        n_offsets=sol.n_offsets, m_offsets=sol.m_offsets)


def local_feedback(sol, k, i):
    """Diagnostic accessors g_k^i = -Pi^{-1} Omega and gtilde_k^i."""
    g = -np.linalg.solve(sol.Pi[i - 1][k], sol.Omega[i - 1][k])
    gt = -np.linalg.solve(sol.PiTilde[i - 1][k], sol.OmegaTilde[i - 1][k])
    return g, gt


def _symmetric_part(M, name, rtol=1e-9):
    scale = max(np.linalg.norm(M), 1e-300)
    if np.linalg.norm(M - M.T) > rtol * scale:
        raise RuntimeError(f"{name} is asymmetric beyond tolerance; solver inconsistency")
    return 0.5 * (M + M.T)


def optimal_cost(sol, model):
    """Closed-form expected cost of the synthesized strategy.

    Per subsystem, the initial-state contribution splits by whether the
    first upload succeeds: with probability p_i the remote knows x_0^i and
    the initial spread is priced by P_0^i, otherwise the spread sits in the
    estimation error and is priced by H_0^i.  Additive noise contributes
    Tr(Sigma_v^i L_{k+1}^i) per step:

        J = sum_i [ mu_i' P_0^i mu_i + p_i Tr(Sigma_x0^i P_0^i)
                    + (1 - p_i) Tr(Sigma_x0^i H_0^i) ]
            + sum_i sum_{k=0}^{N} Tr(Sigma_v^i L_{k+1}^i)

    This is the cost of the block-diagonal (implementable) strategy; it is
    exact when the subsystems are dynamically decoupled from the remote
    input's noise channels, and is cross-checked against the moment oracle.
    """
    model = model.model if isinstance(model, ValidatedModel) else model
    total = 0.0
    for i, s in enumerate(model.subsystems):
        P0 = _symmetric_part(sol.P_sub[i][0], f"P_0^{i + 1}")
        H0 = _symmetric_part(sol.H_sub[i][0], f"H_0^{i + 1}")
        total += float(s.mu @ P0 @ s.mu)
        total += s.p * float(np.trace(s.Sigma_x0 @ P0))
        total += (1.0 - s.p) * float(np.trace(s.Sigma_x0 @ H0))
        for k in range(model.N + 1):
            total += float(np.trace(s.Sigma_v @ sol.L_sub[i][k + 1]))
    return total
