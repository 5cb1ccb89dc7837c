import logging

import numpy as np

from agm_struct.exceptions import NonFiniteInputError, SolverError

# Create a logger for this module
logger = logging.getLogger(__name__)

#       Input Validation       #


def require_finite(values, name="input"):
    """
    Converts the input to a float array and checks that every entry is finite.

    Parameters:
    values (array-like): The values to check.
    name (str): Name used in the error message.

    Returns:
    numpy.ndarray: The values as a float64 array.

    Raises:
    NonFiniteInputError: If any entry is NaN or infinite.
    """
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite values")
    return arr


################################


#     Probability Simplex      #


def project_simplex(v):
    """
    Euclidean projection of a vector onto the probability simplex.

    Sorts the entries, finds the largest support size rho for which the shifted entries
    stay positive and subtracts the matching threshold tau, so out = max(v - tau, 0).

    Parameters:
    v (array-like): A finite k-vector.

    Returns:
    numpy.ndarray: The closest point of the simplex.
    """
    v = require_finite(v, "v").ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    tau = css[cond][-1] / rho
    return np.maximum(v - tau, 0.0)


def clean_distribution(p, tol=1e-12):
    """
    Clamps tiny negative entries produced by floating point noise and renormalizes.
    """
    p = np.asarray(p, dtype=float)
    p = np.where(p < tol, 0.0, p)
    total = p.sum()
    if total <= 0:
        return np.full(p.shape, 1.0 / p.size)
    return p / total


################################


#      Zero-sum LP Oracle      #

from scipy.optimize import linprog


def solve_zero_sum_lp(payoff):
    """
    Solves max over column mixtures r of min over rows j of (payoff @ r)_j by linear programming.

    The maximizing player mixes over columns, the minimizing player over rows. The row
    player's optimal mixture is read from the duals of the inequality constraints.

    Parameters:
    payoff (array-like): An m-by-n payoff matrix.

    Returns:
    tuple: (value, r, p) with the game value, the column mixture r and the row mixture p.

    Raises:
    SolverError: If the LP solver does not report an optimal solution.
    """
    payoff = require_finite(payoff, "payoff")
    m, n = payoff.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    # v - (payoff @ r)_j <= 0 for every row j
    a_ub = np.hstack([-payoff, np.ones((m, 1))])
    b_ub = np.zeros(m)
    a_eq = np.zeros((1, n + 1))
    a_eq[0, :n] = 1.0
    bounds = [(0.0, None)] * n + [(None, None)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if res.status != 0:
        logger.error("zero-sum LP failed: %s", res.message)
        raise SolverError(f"zero-sum LP failed: {res.message}")
    r = clean_distribution(res.x[:n])
    p = clean_distribution(-np.asarray(res.ineqlin.marginals))
    return float(-res.fun), r, p


################################


#        Seeded Randomness       #


def derive_seed(seed, *tags):
    """
    Derives an independent integer seed from a root seed and integer tags.

    Parameters:
    seed (int): The root seed (the CLI's --seed).
    tags (int): Stream identifiers, e.g. split index and model index.

    Returns:
    int: A 63-bit seed, identical across runs for identical inputs.
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [int(t) & 0xFFFFFFFF for t in tags]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def make_rng(seed, *tags):
    return np.random.default_rng(derive_seed(seed, *tags))


#######################################
