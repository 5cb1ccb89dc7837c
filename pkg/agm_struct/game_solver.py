"""
Inner maximin solvers.

For fixed parameters the adversary picks node and edge marginals over the tree and the
predictor answers with node marginals. The problem decomposes into one zero-sum game per node
once the marginal consistency constraints are dualized, and the pairwise marginals are
recovered afterwards by optimal transport. An exact linear program over the same local
polytope and a brute-force joint game over all labelings are provided as oracles.

Pairwise arrays follow the layout described in ``agm_struct.features``.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations, product
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from agm_struct.config import SolverConfig
from agm_struct.exceptions import FeatureShapeError, OracleSizeError, SolverError
from agm_struct.helper_functions import clean_distribution, require_finite, solve_zero_sum_lp
from agm_struct.transport import recover_pairwise

logger = logging.getLogger(__name__)

ORACLE_MAX_ASSIGNMENTS = 3 ** 6
ENUMERATION_MAX_LABELS = 8
_DEFAULT_CFG = SolverConfig()
_EXACT_TRANSPORT = SolverConfig(transport="exact")


@dataclass(frozen=True)
class NodeGameResult:
    """
    Solution of one node game max_r [a^T r + min_j (L r)_j].

    Attributes:
    r (numpy.ndarray): Adversary node marginal.
    p (numpy.ndarray or None): Predictor node marginal (None when not requested).
    value (float): Game value.
    row_assignment (numpy.ndarray): Coupling placing each column mass r[b] on the maximizing rows of A[:, b].
    """
    r: np.ndarray
    p: Optional[np.ndarray]
    value: float
    row_assignment: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class MarginalSet:
    """
    p: (n, k) predictor marginals; Q: (n, k, k) adversary pairwise marginals; r: (n, k) adversary node marginals.
    """
    p: np.ndarray
    Q: np.ndarray
    r: np.ndarray

    def consistency_violation(self, tree):
        """Largest l1 distance between a node's marginal and the row marginal of its child's coupling."""
        worst = 0.0
        for parent, child in tree.edges:
            worst = max(worst, float(np.abs(self.Q[child - 1].sum(axis=1) - self.r[parent - 1]).sum()))
        return worst


@dataclass
class DualState:
    """
    Outcome of the dual decomposition loop.

    Attributes:
    u (numpy.ndarray): (n, k) multipliers at the best dual value; row i-1 is indexed by the parent's labels, the root row is zero.
    iterations (int): Iterations performed.
    best_value (float): Smallest dual value seen (an upper bound on the inner value).
    best_primal (float): Largest primal value seen (a lower bound).
    r_bar (numpy.ndarray): Averaged node marginals.
    converged (bool): Whether the gap tolerance was met.
    history (list): Best dual value after every iteration.
    consistency_violation (float): Local consistency violation of the returned marginals.
    consistent (bool): Whether that violation is within cfg.consistency_tol.
    """
    u: np.ndarray
    iterations: int
    best_value: float
    best_primal: float
    r_bar: np.ndarray
    converged: bool
    history: list = field(default_factory=list, repr=False)
    consistency_violation: float = 0.0
    consistent: bool = True

    @property
    def gap(self):
        return self.best_value - self.best_primal


@dataclass(frozen=True)
class InnerResult:
    value: float
    marginals: MarginalSet
    converged: bool
    iterations: int
    gap: float
    consistent: bool = True


#     Node games     #


@lru_cache(maxsize=None)
def _support_pairs(m, n, s):
    rows = list(combinations(range(m), s))
    cols = list(combinations(range(n), s))
    S = np.array([r for r in rows for _ in cols], dtype=np.int64)
    T = np.array([c for _ in rows for c in cols], dtype=np.int64)
    return S, T


def _batched_solve(systems, rhs):
    try:
        return np.linalg.solve(systems, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full(rhs.shape, np.nan)
        for i in range(systems.shape[0]):
            try:
                out[i] = np.linalg.solve(systems[i], rhs[i])
            except np.linalg.LinAlgError:
                continue
        return out


def _enumerate_maximin(M):
    """
    max over x in the simplex of min_j (M x)_j by enumerating equalizing supports.

    Every basic solution pairs s tight rows with s support columns and solves
    M[S, T] x_T = v 1, sum x_T = 1. Nonnegative solutions are scored by their true
    value; ties go to the lexicographically smallest support.
    """
    m, n = M.shape
    xs = []
    for s in range(1, min(m, n) + 1):
        S, T = _support_pairs(m, n, s)
        count = S.shape[0]
        systems = np.zeros((count, s + 1, s + 1))
        systems[:, :s, :s] = M[S[:, :, None], T[:, None, :]]
        systems[:, :s, s] = -1.0
        systems[:, s, :s] = 1.0
        rhs = np.zeros((count, s + 1))
        rhs[:, s] = 1.0
        sol = _batched_solve(systems, rhs)
        x_T = sol[:, :s]
        ok = np.all(np.isfinite(x_T), axis=1) & np.all(x_T >= -1e-12, axis=1)
        if not ok.any():
            continue
        X = np.zeros((int(ok.sum()), n))
        X[np.arange(X.shape[0])[:, None], T[ok]] = np.maximum(x_T[ok], 0.0)
        X /= X.sum(axis=1, keepdims=True)
        xs.append(X)
    X = np.vstack(xs)
    values = (X @ M.T).min(axis=1)
    best = values.max()
    tied = np.flatnonzero(values >= best - 1e-10 * max(1.0, abs(best)))
    pick = min(tied, key=lambda i: tuple(np.flatnonzero(X[i] > 1e-12)))
    return float(values[pick]), X[pick]


def _zero_one_scale(L):
    """Returns w when L = w (1 - I) with w > 0, else None."""
    w = L[0, 1]
    if w <= 0:
        return None
    if np.allclose(L, w * (1.0 - np.eye(L.shape[0])), rtol=0.0, atol=1e-14 * max(1.0, w)):
        return w
    return None


def _zero_one_game(a, w):
    """
    Closed form for scaled zero-one loss: the adversary is uniform on its top-s labels.

    value = max_s (sum of the s largest a + w (s - 1)) / s and the predictor puts
    p_b = (a_b + w - value) / w on the labels above the threshold.
    """
    k = a.size
    order = np.argsort(-a, kind="stable")
    top = np.cumsum(a[order])
    sizes = np.arange(1, k + 1)
    values = (top + w * (sizes - 1)) / sizes
    best = values.max()
    candidates = []
    for s in np.flatnonzero(values >= best - 1e-12 * max(1.0, abs(best))) + 1:
        threshold = a[order[s - 1]]
        above = np.flatnonzero(a > threshold)
        at = np.flatnonzero(a == threshold)[:s - above.size]
        candidates.append(tuple(sorted(np.concatenate([above, at]).tolist())))
    support = list(min(candidates))
    r = np.zeros(k)
    r[support] = 1.0 / len(support)
    p = clean_distribution(np.maximum(a + w - best, 0.0) / w)
    return float(best), r, p


def row_assignment(A, r, tie_tol=1e-12):
    """Spreads each column mass r[b] uniformly over the rows attaining max A[:, b] (within tie_tol)."""
    colmax = A.max(axis=0)
    mask = A >= colmax[None, :] - tie_tol * np.maximum(1.0, np.abs(colmax))[None, :]
    return mask / mask.sum(axis=0, keepdims=True) * r[None, :]


def solve_node_game(a, L, A=None, cfg=None, with_p=True):
    """
    Solves max over r in the simplex of a^T r + min_j (L r)_j exactly.

    Parameters:
    a (array-like): Node potential vector (the column-wise maximum of A when A is given).
    L (array-like): k-by-k loss matrix, rows predicted labels, columns adversary labels.
    A (array-like, optional): The pairwise matrix a was taken from; used for the row assignment.
    cfg (SolverConfig, optional): tie_tol and zero_one_fast_path are read from it.
    with_p (bool): Also solve for the predictor's minimizing marginal.

    Returns:
    NodeGameResult: The adversary marginal r, the predictor marginal p and the game value.

    Raises:
    NonFiniteInputError: If a or L contain non-finite values.
    """
    cfg = cfg or _DEFAULT_CFG
    a = require_finite(a, "a").ravel()
    L = require_finite(L, "L")
    k = a.size
    if L.shape != (k, k):
        raise FeatureShapeError(f"loss matrix has shape {L.shape}, expected ({k}, {k})")
    A = a[None, :] if A is None else require_finite(A, "A")

    w = _zero_one_scale(L) if cfg.zero_one_fast_path else None
    if w is not None:
        value, r, p = _zero_one_game(a, w)
    else:
        M = a[None, :] + L
        if k <= ENUMERATION_MAX_LABELS:
            value, r = _enumerate_maximin(M)
            p = None
            if with_p:
                _, p = _enumerate_maximin(-M.T)
        else:
            value, r, p = solve_zero_sum_lp(M)
        p = clean_distribution(p) if p is not None else None
    r = clean_distribution(r)
    return NodeGameResult(r=r, p=p if with_p else None, value=value,
                          row_assignment=row_assignment(A, r, cfg.tie_tol))


################################


#     Tree decomposition     #


def _check_problem(tree, pots, losses):
    losses = require_finite(losses, "losses")
    n, k = pots.b.shape
    if n != tree.n or pots.B.shape != (n, k, k) or losses.shape != (n, k, k):
        raise FeatureShapeError(
            f"inconsistent shapes: tree n={tree.n}, b {pots.b.shape}, B {pots.B.shape}, losses {losses.shape}")
    require_finite(pots.b, "b")
    require_finite(pots.B, "B")
    return losses


def _node_matrices(tree, pots, u):
    """A_i = B_i + 1 b_i^T - u_i 1^T + sum over children c of 1 u_c^T, stacked as (n, k, k)."""
    A = pots.B + pots.b[:, None, :] - u[:, :, None]
    child_sum = np.zeros_like(pots.b)
    parent_index = tree.parent_index
    nonroot = parent_index >= 0
    np.add.at(child_sum, parent_index[nonroot], u[nonroot])
    return A + child_sum[:, None, :]


def couple_edges(tree, pots, r, cfg=None):
    """Pairwise marginals (n, k, k) coupling every node marginal with its parent's via recover_pairwise."""
    n, k = pots.b.shape
    Q = np.zeros((n, k, k))
    for i in range(n):
        if i == tree.root - 1:
            Q[i, 0] = r[i]
        else:
            Q[i] = recover_pairwise(pots.B[i], r[i], r[tree.parent_index[i]], cfg)
    return Q


def primal_value(tree, pots, losses, r):
    """
    Inner objective at node marginals r, with every edge coupled by the exact transport LP.

    Any node marginals are feasible once their edges are coupled, so the value is a valid
    lower bound on the inner optimum.

    Returns:
    tuple: (value, Q).
    """
    Q = couple_edges(tree, pots, r, _EXACT_TRANSPORT)
    nodes = (pots.b * r).sum() + np.einsum("ijb,ib->ij", losses, r).min(axis=1).sum()
    edges = (Q * pots.B)[tree.parent_index >= 0].sum()
    return float(nodes + edges), Q


def _node_games(tree, A, losses, cfg, with_p):
    root = tree.root - 1
    results = []
    for i in range(A.shape[0]):
        Ai = A[i, :1] if i == root else A[i]
        results.append(solve_node_game(Ai.max(axis=0), losses[i], A=Ai, cfg=cfg, with_p=with_p))
    return results


def dual_decomposition(tree, pots, losses, cfg=None):
    """
    Minimizes the decomposed dual over the consistency multipliers u by subgradient descent.

    Each iteration solves every node game at the current u; the subgradient for child i is
    r_pt(i) - Q~_i 1, the violation of the consistency constraint. Node marginals are
    averaged across iterations and periodically turned into a feasible primal point
    by coupling every edge exactly, which certifies the duality gap. The pairwise marginals
    returned for the best primal point are recovered once more with the configured transport.

    Parameters:
    tree (TreeGraph): The label tree.
    pots (Potentials): Node and edge potentials.
    losses (numpy.ndarray): (n, k, k) per-node loss matrices.
    cfg (SolverConfig, optional): Iteration limits, step rule, gap tolerance and transport settings.

    Returns:
    tuple: (DualState, MarginalSet).
    """
    cfg = cfg or _DEFAULT_CFG
    losses = _check_problem(tree, pots, losses)
    n, k = pots.b.shape
    parent_index = tree.parent_index
    nonroot = parent_index >= 0

    u = np.zeros((n, k))
    u_best = u.copy()
    r_sum = np.zeros((n, k))
    best_dual = np.inf
    best_primal = -np.inf
    best_r = None
    best_Q = None
    delta = None
    stall = 0
    history = []
    converged = False
    t = 0

    for t in range(1, cfg.max_iters + 1):
        games = _node_games(tree, _node_matrices(tree, pots, u), losses, cfg, with_p=False)
        dual = sum(game.value for game in games)
        r = np.array([g.r for g in games])
        rows = np.array([game.row_assignment.sum(axis=1) if i != tree.root - 1 else np.zeros(k)
                         for i, game in enumerate(games)])
        grad = np.zeros((n, k))
        grad[nonroot] = r[parent_index[nonroot]] - rows[nonroot]
        gnorm_sq = float((grad * grad).sum())
        r_sum += r

        if dual < best_dual:
            best_dual = dual
            u_best = u.copy()
            stall = 0
        else:
            stall += 1
        history.append(best_dual)

        if t == 1 or t % cfg.primal_every == 0 or t == cfg.max_iters or gnorm_sq == 0.0:
            for candidate in (r, r_sum / t):
                value, Q = primal_value(tree, pots, losses, candidate)
                if value > best_primal:
                    best_primal, best_r, best_Q = value, candidate.copy(), Q
            if gnorm_sq == 0.0 or best_dual - best_primal <= cfg.gap_tol * max(1.0, abs(best_dual)):
                converged = True
                break

        if cfg.step_rule == "polyak":
            if delta is None:
                delta = max(best_dual - best_primal, 1e-3 * max(1.0, abs(best_dual)))
            if stall >= cfg.patience:
                delta *= 0.5
                stall = 0
            target = max(best_primal, best_dual - delta)
            eta = cfg.step0 * (dual - target) / gnorm_sq
        else:
            eta = cfg.step0 / np.sqrt(t)
        u = u - eta * grad
        u[~nonroot] = 0.0
        logger.debug("dual decomposition iter %d: dual=%.6g best=%.6g primal=%.6g", t, dual, best_dual, best_primal)

    r_bar = r_sum / max(t, 1)
    if not converged:
        logger.warning("dual decomposition stopped after %d iterations with gap %.3g", t, best_dual - best_primal)
    if cfg.transport != "exact":
        best_Q = couple_edges(tree, pots, best_r, cfg)
    p = np.array([game.p for game in _node_games(tree, _node_matrices(tree, pots, u_best), losses, cfg, with_p=True)])
    marginals = MarginalSet(p=p, Q=best_Q, r=best_r)
    violation = marginals.consistency_violation(tree)
    consistent = violation <= cfg.consistency_tol
    if not consistent:
        logger.warning("recovered marginals violate local consistency by %.3g (tolerance %.3g)",
                       violation, cfg.consistency_tol)
    state = DualState(u=u_best, iterations=t, best_value=float(best_dual), best_primal=float(best_primal),
                      r_bar=r_bar, converged=converged, history=history,
                      consistency_violation=violation, consistent=consistent)
    return state, marginals


################################


#     Exact oracles     #


def solve_inner_lp(tree, pots, losses):
    """
    Solves the inner maximin exactly as one LP over the local marginal polytope of the tree.

    Variables are the pairwise blocks Q_i (1-by-k at the root) and one value v_i per node with
    v_i <= (L_i Q_i^T 1)_j for every row j. The duals of those rows are the predictor marginals.

    Returns:
    tuple: (value, MarginalSet).

    Raises:
    SolverError: If the LP solver does not report an optimal solution.
    """
    losses = _check_problem(tree, pots, losses)
    n, k = pots.b.shape
    root = tree.root - 1
    parent_index = tree.parent_index
    heights = [1 if i == root else k for i in range(n)]
    offsets = np.concatenate([[0], np.cumsum([h * k for h in heights])])
    n_q = int(offsets[-1])
    n_var = n_q + n

    c = np.zeros(n_var)
    c[n_q:] = -1.0
    ub_rows, ub_cols, ub_vals = [], [], []
    eq_rows, eq_cols, eq_vals = [], [], []
    b_eq = []
    for i in range(n):
        h = heights[i]
        block = np.arange(offsets[i], offsets[i + 1]).reshape(h, k)
        c[block] = -(pots.B[i, :h] + pots.b[i][None, :])
        for j in range(k):
            row = i * k + j
            ub_rows.append(row)
            ub_cols.append(n_q + i)
            ub_vals.append(1.0)
            for a in range(h):
                ub_rows.extend([row] * k)
                ub_cols.extend(block[a].tolist())
                ub_vals.extend((-losses[i][j]).tolist())
        if i == root:
            eq_rows.extend([len(b_eq)] * k)
            eq_cols.extend(block[0].tolist())
            eq_vals.extend([1.0] * k)
            b_eq.append(1.0)
            continue
        pt = parent_index[i]
        parent_block = np.arange(offsets[pt], offsets[pt + 1]).reshape(heights[pt], k)
        for a in range(k):
            row = len(b_eq)
            eq_rows.extend([row] * k + [row] * heights[pt])
            eq_cols.extend(block[a].tolist() + parent_block[:, a].tolist())
            eq_vals.extend([1.0] * k + [-1.0] * heights[pt])
            b_eq.append(0.0)

    a_ub = sparse.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(n * k, n_var))
    a_eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(b_eq), n_var))
    bounds = [(0.0, None)] * n_q + [(None, None)] * n
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n * k), A_eq=a_eq, b_eq=np.array(b_eq),
                  bounds=bounds, method="highs")
    if res.status != 0:
        logger.error("inner LP failed: %s", res.message)
        raise SolverError(f"inner LP failed: {res.message}")

    x = np.maximum(res.x, 0.0)
    Q = np.zeros((n, k, k))
    for i in range(n):
        Q[i, :heights[i]] = x[offsets[i]:offsets[i + 1]].reshape(heights[i], k)
    r = Q.sum(axis=1)
    duals = -np.asarray(res.ineqlin.marginals)
    p = np.array([clean_distribution(duals[i * k:(i + 1) * k]) for i in range(n)])
    return float(-res.fun), MarginalSet(p=p, Q=Q, r=r)


def solve_inner(tree, pots, losses, cfg=None):
    """
    Dispatches on cfg.method: "dual_decomposition" or the exact "lp".

    Returns:
    InnerResult: The inner value with the adversary and predictor marginals.
    """
    cfg = cfg or _DEFAULT_CFG
    if cfg.method == "lp":
        value, marginals = solve_inner_lp(tree, pots, losses)
        return InnerResult(value=value, marginals=marginals, converged=True, iterations=1, gap=0.0)
    state, marginals = dual_decomposition(tree, pots, losses, cfg)
    return InnerResult(value=state.best_value, marginals=marginals, converged=state.converged,
                       iterations=state.iterations, gap=state.gap, consistent=state.consistent)


def enumerate_labelings(n, k):
    """All k^n labelings (0-based) in lexicographic order, as an (k^n, n) array."""
    return np.array(list(product(range(k), repeat=n)), dtype=np.int64).reshape(-1, n)


def labeling_scores(tree, pots, labelings):
    """Potential score sum_i b_i[y_i] + sum_edges B[y_pt, y_i] of every 0-based labeling."""
    n = tree.n
    scores = pots.b[np.arange(n)[None, :], labelings].sum(axis=1)
    for parent, child in tree.edges:
        scores = scores + pots.B[child - 1][labelings[:, parent - 1], labelings[:, child - 1]]
    return scores


def exhaustive_joint_game(tree, pots, losses, truth=None):
    """
    Solves the inner game over full joint distributions of labelings by linear programming.

    Parameters:
    tree (TreeGraph): The label tree.
    pots (Potentials): Node and edge potentials.
    losses (numpy.ndarray): (n, k, k) per-node loss matrices.
    truth (EncodedTruth, optional): When given, the potential score of the gold labeling is subtracted.

    Returns:
    tuple: (value, MarginalSet) with marginals implied by the optimal joint mixtures.

    Raises:
    OracleSizeError: If k^n exceeds 729.
    """
    losses = _check_problem(tree, pots, losses)
    n, k = pots.b.shape
    if k ** n > ORACLE_MAX_ASSIGNMENTS:
        raise OracleSizeError(f"{k}^{n} labelings exceed the oracle limit of {ORACLE_MAX_ASSIGNMENTS}")
    Y = enumerate_labelings(n, k)
    payoff = np.zeros((Y.shape[0], Y.shape[0]))
    for i in range(n):
        payoff += losses[i][Y[:, i][:, None], Y[:, i][None, :]]
    payoff += labeling_scores(tree, pots, Y)[None, :]
    if truth is not None:
        payoff -= float((truth.z * pots.b).sum() + (truth.Z * pots.B).sum())
    value, adversary, predictor = solve_zero_sum_lp(payoff)

    r = np.zeros((n, k))
    p = np.zeros((n, k))
    Q = np.zeros((n, k, k))
    for i in range(n):
        np.add.at(r[i], Y[:, i], adversary)
        np.add.at(p[i], Y[:, i], predictor)
        pt = tree.parent_index[i]
        if pt < 0:
            Q[i, 0] = r[i]
        else:
            np.add.at(Q[i], (Y[:, pt], Y[:, i]), adversary)
    return value, MarginalSet(p=p, Q=Q, r=r)
