"""Exact policy evaluation by second-moment propagation.

For any linear strategy Uhat_k = Khat_k Xhat_k, Utilde_k = Kt_k Xtilde_k,
the closed loop is linear in (Xhat, Xtilde) with independent multiplicative
randomness, so the expected cost is an exact function of the second moments

    S_k = E[Xhat Xhat'],  T_k = E[Xtilde Xtilde'],  C_k = E[Xhat Xtilde'].

Writing F = A + B Khat, G = A + B Kt, Phi_i = Abold_i + Bbold_i Khat,
Psi_i = Abold_i + Bbold_i Kt and D for everything the next-step arrival
indicator splits between estimate and error,

    Xhat_{k+1} = F Xhat_k + Gamma_{k+1} D_k,
    Xtilde_{k+1} = (I - Gamma_{k+1}) D_k,
    D_k = G Xtilde_k + sum_i w_k^i (Phi_i Xhat_k + Psi_i Xtilde_k) + V_k.

The only subtle expectation is over the Bernoulli diagonal: E[Gamma M Gamma]
has block (i, j) weighted by p_i p_j off the diagonal but p_i on it
(independence across subsystems, gamma^2 = gamma).  These block-Hadamard
weights are the crux of exactness and are materialized explicitly.

This module is the quantitative stand-in for the equilibrium (stationarity)
condition of the underlying forward-backward system: a candidate gain
schedule is optimal iff the exact cost is stationary in every gain entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ValidatedModel


class HorizonMismatch(ValueError):
    pass


def _unwrap(model):
    return model.model if isinstance(model, ValidatedModel) else model


def bernoulli_weights(model):
    """Block-Hadamard weight matrices for the arrival indicator Gamma.

    Returns (Wgg, Wcc, Wgc) with block (i, j) entries:
      Wgg: E[gamma_i gamma_j]      = p_i p_j (i != j),  p_i (i = j)
      Wcc: E[(1-gamma_i)(1-gamma_j)] = (1-p_i)(1-p_j) / (1-p_i)
      Wgc: E[gamma_i (1-gamma_j)]  = p_i (1-p_j) (i != j),  0 (i = j)
    """
    model = _unwrap(model)
    NL = model.n_total
    noff = model.n_offsets
    Wgg = np.zeros((NL, NL))
    Wcc = np.zeros((NL, NL))
    Wgc = np.zeros((NL, NL))
    for i, si in enumerate(model.subsystems, start=1):
        ri = slice(noff[i - 1], noff[i])
        for j, sj in enumerate(model.subsystems, start=1):
            rj = slice(noff[j - 1], noff[j])
            if i == j:
                Wgg[ri, rj] = si.p
                Wcc[ri, rj] = 1.0 - si.p
                Wgc[ri, rj] = 0.0
            else:
                Wgg[ri, rj] = si.p * sj.p
                Wcc[ri, rj] = (1.0 - si.p) * (1.0 - sj.p)
                Wgc[ri, rj] = si.p * (1.0 - sj.p)
    return Wgg, Wcc, Wgc


def _blockdiag(blocks, NL, noff):
    M = np.zeros((NL, NL))
    for i, b in enumerate(blocks):
        r = slice(noff[i], noff[i + 1])
        M[r, r] = b
    return M


@dataclass
class MomentState:
    """Second and first moments of (Xhat, Xtilde) at one step."""

    k: int
    S: np.ndarray
    T: np.ndarray
    C: np.ndarray
    mean_xhat: np.ndarray
    mean_xtilde: np.ndarray

    @property
    def state_second_moment(self):
        """E[X X'] with X = Xhat + Xtilde."""
        return self.S + self.C + self.C.T + self.T


def propagate_moments(model, stacked, gain_schedule):
    """Yield MomentState for k = 0..N+1 under the given gains."""
    model = _unwrap(model)
    N = model.N
    if gain_schedule.Khat.shape[0] < N + 1:
        raise HorizonMismatch(
            f"gains cover {gain_schedule.Khat.shape[0]} steps, horizon needs {N + 1}")
    NL = stacked.NL
    noff = stacked.n_offsets
    Wgg, Wcc, Wgc = bernoulli_weights(model)
    p_diag = stacked.p_diag
    I_p = np.eye(NL) - p_diag
    Sigma0 = _blockdiag([s.Sigma_x0 for s in model.subsystems], NL, noff)
    Sigma_v = _blockdiag([s.Sigma_v for s in model.subsystems], NL, noff)
    mu = np.concatenate([s.mu for s in model.subsystems])
    S = np.outer(mu, mu) + Wgg * Sigma0
    T = Wcc * Sigma0
    C = Wgc * Sigma0
    m_hat = mu.copy()
    m_til = np.zeros(NL)
    A, B = stacked.A, stacked.B
    for k in range(N + 1):
        yield MomentState(k=k, S=S, T=T, C=C, mean_xhat=m_hat, mean_xtilde=m_til)
        Kh = gain_schedule.Khat[k]
        Kt = gain_schedule.Ktilde_full(k)
        F = A + B @ Kh
        G = A + B @ Kt
        Phi = [Ab + Bb @ Kh for Ab, Bb in zip(stacked.Abold, stacked.Bbold)]
        Psi = [Ab + Bb @ Kt for Ab, Bb in zip(stacked.Abold, stacked.Bbold)]
        W = G @ T @ G.T + Sigma_v
        for sw, Ph, Ps in zip(stacked.sigma_w, Phi, Psi):
            W = W + sw * (Ph @ S @ Ph.T + Ph @ C @ Ps.T
                          + Ps @ C.T @ Ph.T + Ps @ T @ Ps.T)
        CG = C @ G.T          # E[Xhat D'] (w has zero mean, V independent)
        S = F @ S @ F.T + F @ CG @ p_diag + p_diag @ CG.T @ F.T + Wgg * W
        C_next = F @ CG @ I_p + Wgc * W
        T = Wcc * W
        C = C_next
        m_hat, m_til = F @ m_hat + p_diag @ (G @ m_til), I_p @ (G @ m_til)
    yield MomentState(k=N + 1, S=S, T=T, C=C, mean_xhat=m_hat, mean_xtilde=m_til)


def stage_costs(model, stacked, gain_schedule):
    """Exact expected stage costs for k = 0..N and the terminal cost."""
    model = _unwrap(model)
    Q, R, PT = model.Q, model.R, model.P_terminal
    stages = []
    terminal = None
    for ms in propagate_moments(model, stacked, gain_schedule):
        XX = ms.state_second_moment
        if ms.k == model.N + 1:
            terminal = float(np.trace(PT @ XX))
            break
        Kh = gain_schedule.Khat[ms.k]
        Kt = gain_schedule.Ktilde_full(ms.k)
        UU = (Kh @ ms.S @ Kh.T + Kh @ ms.C @ Kt.T
              + Kt @ ms.C.T @ Kh.T + Kt @ ms.T @ Kt.T)
        stages.append(float(np.trace(Q @ XX)) + float(np.trace(R @ UU)))
    return stages, terminal


def exact_cost(model, stacked, gain_schedule):
    """Exact expected total cost of the strategy (no sampling involved)."""
    stages, terminal = stage_costs(model, stacked, gain_schedule)
    return math.fsum(stages + [terminal])


@dataclass
class CostateCheck:
    """Results of the gain-space stationarity probe."""

    cost: float
    max_abs_derivative: float
    threshold: float
    entries_probed: int
    min_second_difference: float
    derivatives: list = field(default_factory=list)  # (label, value)

    @property
    def stationary(self):
        return self.max_abs_derivative <= self.threshold


def _gain_entries(gain_schedule):
    """All tunable gain entries as (label, getter, setter) triples."""
    out = []
    N = gain_schedule.N
    for k in range(N + 1):
        Kh = gain_schedule.Khat[k]
        for r in range(Kh.shape[0]):
            for c in range(Kh.shape[1]):
                out.append((f"Khat[{k}][{r},{c}]", ("Khat", k, r, c)))
        for i, Kt in enumerate(gain_schedule.Ktilde):
            for r in range(Kt.shape[1]):
                for c in range(Kt.shape[2]):
                    out.append((f"Ktilde{i + 1}[{k}][{r},{c}]", ("Ktilde", k, r, c, i)))
    return out


def _entry_ref(gain_schedule, key):
    if key[0] == "Khat":
        _, k, r, c = key
        return gain_schedule.Khat[k], (r, c)
    _, k, r, c, i = key
    return gain_schedule.Ktilde[i][k], (r, c)


def stationarity_check(model, stacked, gain_schedule, max_entries=500, rng_seed=0):
    """Central-difference derivative of exact_cost in every gain entry.

    The cost is an exact quadratic in each entry, so central differences
    are exact up to round-off; the per-entry step is 1e-5 (1 + |entry|).
    When the schedule has more than `max_entries` entries, a seeded random
    subset of that size is probed.
    """
    model = _unwrap(model)
    base = exact_cost(model, stacked, gain_schedule)
    entries = _gain_entries(gain_schedule)
    if len(entries) > max_entries:
        rng = np.random.default_rng(rng_seed)
        idx = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[j] for j in sorted(idx)]
    max_d = 0.0
    min_dd = math.inf
    derivs = []
    for label, key in entries:
        M, (r, c) = _entry_ref(gain_schedule, key)
        orig = M[r, c]
        eps = 1e-5 * (1.0 + abs(orig))
        M[r, c] = orig + eps
        up = exact_cost(model, stacked, gain_schedule)
        M[r, c] = orig - eps
        dn = exact_cost(model, stacked, gain_schedule)
        M[r, c] = orig
        d = (up - dn) / (2.0 * eps)
        dd = (up - 2.0 * base + dn) / (eps * eps)
        derivs.append((label, d))
        max_d = max(max_d, abs(d))
        min_dd = min(min_dd, dd)
    return CostateCheck(
        cost=base, max_abs_derivative=max_d,
        threshold=1e-6 * (1.0 + abs(base)), entries_probed=len(entries),
        min_second_difference=min_dd, derivatives=derivs)


@dataclass
class CostateMomentsReport:
    """Per-step audit of the costate-value telescoping identity.

    costate_value[k] is E[X_k' (P_k Xhat_k + H_k Xtilde_k)]; the identity

        costate_value[k] - costate_value[k+1]
            = E[stage cost at k] - Tr(L_{k+1} Sigma_v)

    telescopes to the total cost.  (This scalar sequence is distinct from
    the stacked additive-noise vector; it is named costate_value to keep
    the two apart.)
    """

    costate_value: list
    stage: list
    noise_term: list
    residuals: list
    max_relative_residual: float


def costate_moments(model, stacked, gain_schedule, sol):
    """Evaluate both sides of the telescoping identity from exact moments."""
    model = _unwrap(model)
    N = model.N
    noff = stacked.n_offsets
    Sigma_v = _blockdiag([s.Sigma_v for s in model.subsystems], stacked.NL, noff)
    stages, terminal = stage_costs(model, stacked, gain_schedule)
    V = []
    for ms in propagate_moments(model, stacked, gain_schedule):
        k = ms.k
        # E[X' P Xhat] = Tr(P E[Xhat X']), E[Xhat X'] = S + C
        V.append(float(np.trace(sol.P[k] @ (ms.S + ms.C))
                       + np.trace(sol.H[k] @ (ms.C.T + ms.T))))
    noise = [float(np.trace(sol.L[k + 1] @ Sigma_v)) for k in range(N + 1)]
    residuals = []
    worst = 0.0
    for k in range(N + 1):
        lhs = V[k] - V[k + 1]
        rhs = stages[k] - noise[k]
        res = lhs - rhs
        residuals.append(res)
        worst = max(worst, abs(res) / (1.0 + max(abs(lhs), abs(rhs))))
    return CostateMomentsReport(
        costate_value=V, stage=stages, noise_term=noise,
        residuals=residuals, max_relative_residual=worst)
