"""
Recovery of pairwise adversary marginals from node marginals.

Given the parent and child node marginals, the pairwise marginal is the coupling of the two
that maximizes <Q, B>: a small optimal transport problem with cost -B. It is solved with
log-domain Sinkhorn iterations and then rounded so both marginal constraints hold exactly,
or with an exact transport LP.
"""
import logging

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from agm_struct.config import SolverConfig
from agm_struct.exceptions import SolverError, TransportError
from agm_struct.helper_functions import require_finite

logger = logging.getLogger(__name__)

MASS_TOL = 1e-8
_DEFAULT_CFG = SolverConfig()


def resolve_eps(B, cfg=None):
    """
    Entropic regularization used for a potential matrix: cfg.sinkhorn_eps when set, otherwise
    cfg.sinkhorn_eps_scale * max|B| (the bare scale when B is all zeros).
    """
    cfg = cfg or _DEFAULT_CFG
    if cfg.sinkhorn_eps is not None:
        return float(cfg.sinkhorn_eps)
    scale = float(np.max(np.abs(B))) if np.size(B) else 0.0
    return cfg.sinkhorn_eps_scale * scale if scale > 0 else cfg.sinkhorn_eps_scale


def sinkhorn_slack(B, cfg=None):
    """Certified objective gap eps * log(k_parent * k_child) of the rounded Sinkhorn coupling."""
    B = np.asarray(B)
    return resolve_eps(B, cfg) * np.log(max(B.shape[0] * B.shape[1], 1))


def _check_marginal(r, name):
    r = require_finite(r, name).ravel()
    if np.any(r < -1e-12):
        raise TransportError(f"{name} has negative mass {r.min()}")
    return np.where(r < 0, 0.0, r)


def _sinkhorn_stage(log_a, log_b, a, cost, eps, alpha, beta, max_iters, tol):
    """Log-domain updates of the dual potentials (alpha, beta) at one regularization level."""
    it = 0
    while it < max_iters:
        alpha = eps * (log_a - logsumexp((beta[None, :] - cost) / eps, axis=1))
        beta = eps * (log_b - logsumexp((alpha[:, None] - cost) / eps, axis=0))
        it += 1
        if it % 10 == 0 or it == max_iters:
            plan = np.exp((alpha[:, None] + beta[None, :] - cost) / eps)
            if np.abs(plan.sum(axis=1) - a).sum() < tol:
                return alpha, beta, it, True
    return alpha, beta, it, False


def sinkhorn_log(a, b, cost, eps, max_iters=5000, tol=1e-6, inner_iters=50):
    """
    Log-domain Sinkhorn with epsilon scaling for entropic optimal transport.

    The regularization decays as (eps0 - eps) exp(-s) + eps from eps0 = the cost range,
    each stage warm-started from the previous dual potentials and run for at most
    inner_iters updates; the last stage runs at eps until tol or the iteration cap.

    Parameters:
    a (numpy.ndarray): Positive row marginal.
    b (numpy.ndarray): Positive column marginal with the same mass.
    cost (numpy.ndarray): Transport cost matrix.
    eps (float): Target entropic regularization.
    max_iters (int): Cap on the total number of updates.
    tol (float): Stop when the row marginal violation (l1) falls below this value.
    inner_iters (int): Update cap of each intermediate stage.

    Returns:
    tuple: (plan, converged).
    """
    log_a = np.log(a)
    log_b = np.log(b)
    alpha = np.zeros(a.size)
    beta = np.zeros(b.size)
    eps0 = max(float(cost.max() - cost.min()), eps)
    budget = max_iters
    stage = 0
    while budget > 0:
        reg = (eps0 - eps) * np.exp(-stage) + eps
        final = reg <= eps * (1.0 + 1e-3)
        if final:
            reg = eps
        cap = budget if final else min(inner_iters, budget)
        alpha, beta, used, converged = _sinkhorn_stage(log_a, log_b, a, cost, reg, alpha, beta, cap,
                                                        tol if final else 1e-3)
        budget -= used
        if final:
            break
        stage += 1
    else:
        converged = False
    plan = np.exp((alpha[:, None] + beta[None, :] - cost) / eps)
    if not converged:
        logger.debug("Sinkhorn stopped after %d updates without reaching tol=%g", max_iters - budget, tol)
    return plan, converged


def round_to_marginals(plan, a, b):
    """
    Rounds a nonnegative plan onto the transport polytope U(a, b).

    Rows are scaled down to at most a, then columns to at most b, and the leftover mass is
    added back as the rank-one product of the row and column deficits.
    """
    plan = np.asarray(plan, dtype=float).copy()
    row = plan.sum(axis=1)
    x = np.minimum(np.divide(a, row, out=np.ones_like(a), where=row > 0), 1.0)
    plan *= x[:, None]
    col = plan.sum(axis=0)
    y = np.minimum(np.divide(b, col, out=np.ones_like(b), where=col > 0), 1.0)
    plan *= y[None, :]
    err_r = a - plan.sum(axis=1)
    err_c = b - plan.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        plan += np.outer(err_r, err_c) / total
    return plan


def transport_lp(a, b, B):
    """
    Exact maximizer of <Q, B> over couplings of a and b, by linear programming.

    Raises:
    SolverError: If the LP solver does not report an optimal solution.
    """
    m, n = B.shape
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([a, b])
    res = linprog(-B.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"transport LP failed: {res.message}")
    return np.maximum(res.x.reshape(m, n), 0.0)


def recover_pairwise(B, r_child, r_parent, cfg=None):
    """
    Pairwise marginal Q maximizing <Q, B> subject to Q 1 = r_parent and Q^T 1 = r_child.

    The problem is restricted to the labels carrying mass in both marginals; zero-mass rows and
    columns of Q stay zero.

    Parameters:
    B (array-like): (k_parent, k_child) potential matrix.
    r_child (array-like): Child node marginal.
    r_parent (array-like): Parent node marginal.
    cfg (SolverConfig, optional): transport selects "sinkhorn" or "exact"; Sinkhorn knobs as configured.

    Returns:
    numpy.ndarray: The (k_parent, k_child) coupling.

    Raises:
    TransportError: If the marginal masses differ by more than 1e-8 or a marginal is negative.
    """
    cfg = cfg or _DEFAULT_CFG
    B = require_finite(B, "B")
    r_child = _check_marginal(r_child, "r_child")
    r_parent = _check_marginal(r_parent, "r_parent")
    if B.shape != (r_parent.size, r_child.size):
        raise TransportError(f"B has shape {B.shape}, marginals need ({r_parent.size}, {r_child.size})")
    mass = r_parent.sum()
    if abs(mass - r_child.sum()) > MASS_TOL:
        raise TransportError(f"marginal masses differ: parent {mass!r}, child {r_child.sum()!r}")

    rows = np.flatnonzero(r_parent > 0)
    cols = np.flatnonzero(r_child > 0)
    Q = np.zeros(B.shape)
    if rows.size == 0 or cols.size == 0:
        return Q
    a = r_parent[rows]
    b = r_child[cols] * (a.sum() / r_child[cols].sum())
    sub = B[np.ix_(rows, cols)]
    if rows.size == 1 or cols.size == 1:
        plan = np.outer(a, b) / a.sum()
    elif cfg.transport == "exact":
        plan = transport_lp(a, b, sub)
    else:
        plan, _ = sinkhorn_log(a, b, -sub, resolve_eps(B, cfg), cfg.sinkhorn_max_iters, cfg.sinkhorn_tol)
    Q[np.ix_(rows, cols)] = round_to_marginals(plan, a, b)
    return Q
