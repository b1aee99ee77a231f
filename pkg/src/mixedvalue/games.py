"""Finite two-player zero-sum matrix games in mixed strategies.

This is the computational heart of the relaxed Hamiltonian: the sup over
probability measures on the first control grid against the inf over
measures on the second reduces, for a bilinear payoff, to a finite matrix
game.  The default solver is a dense primal simplex on the classical
shifted-game linear program (one value variable, one constraint per pure
strategy); fictitious play is kept as an independent verification oracle.

Conventions: rows belong to the maximizing player, columns to the
minimizing player, entries are payoffs to the maximizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:  # numba only accelerates the fictitious-play oracle
    from numba import njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


__all__ = [
    "PayoffMatrix",
    "MixedStrategy",
    "GameSolution",
    "GameError",
    "solve_game",
    "pure_minimax",
    "best_response_value",
    "fictitious_play",
    "FictitiousPlayResult",
]


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class PayoffMatrix:
    """m x k payoff matrix to the (row) maximizer."""

    entries: np.ndarray

    def __post_init__(self):
        ent = np.asarray(self.entries, dtype=float)
        if ent.ndim != 2 or ent.shape[0] < 1 or ent.shape[1] < 1:
            raise GameError(f"payoff matrix must be 2-d and non-empty, got shape {ent.shape}")
        if not np.all(np.isfinite(ent)):
            raise GameError("payoff matrix has non-finite entries")
        ent = ent.copy()
        ent.flags.writeable = False
        object.__setattr__(self, "entries", ent)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def k(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class MixedStrategy:
    """Probability vector over a finite control grid."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise GameError("strategy weights must form a non-empty vector")
        if np.any(w < -1e-12) or not np.all(np.isfinite(w)):
            raise GameError("strategy weights must be nonnegative and finite")
        if abs(w.sum() - 1.0) > 1e-12:
            raise GameError(f"strategy weights must sum to 1, got {w.sum()!r}")
        w = np.maximum(w, 0.0)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class GameSolution:
    value: float
    mu_star: MixedStrategy
    nu_star: MixedStrategy
    duality_gap: float


def pure_minimax(matrix: PayoffMatrix) -> tuple[float, float]:
    """Pure-strategy bounds: (max-min over rows, min-max over columns)."""
    ent = matrix.entries
    lower = float(ent.min(axis=1).max())
    upper = float(ent.max(axis=0).min())
    return lower, upper


def best_response_value(matrix: PayoffMatrix, strategy: MixedStrategy, side: str) -> float:
    """Value of the best pure response against ``strategy``.

    ``side="row"``: the row player responds to a column strategy (max);
    ``side="col"``: the column player responds to a row strategy (min).
    """
    ent = matrix.entries
    w = strategy.weights
    if side == "row":
        if len(w) != matrix.k:
            raise GameError(f"expected column strategy of length {matrix.k}, got {len(w)}")
        return float((ent @ w).max())
    if side == "col":
        if len(w) != matrix.m:
            raise GameError(f"expected row strategy of length {matrix.m}, got {len(w)}")
        return float((w @ ent).min())
    raise GameError(f"side must be 'row' or 'col', got {side!r}")


# ---------------------------------------------------------------------------
# LP solver (dense primal simplex on the shifted game)
# ---------------------------------------------------------------------------
#
# For a game matrix with all entries >= 1 the column player's program
#     max  sum(q)   s.t.  M q <= 1,  q >= 0
# has optimum 1/v where v is the game value; the optimal column strategy is
# q/sum(q) and the row strategy is read from the dual (the objective-row
# coefficients of the slack columns in the final tableau).


def _simplex_game(ms: np.ndarray, tol_pivot: float = 1e-11):
    m, k = ms.shape
    tableau = np.zeros((m + 1, k + m + 1))
    tableau[:m, :k] = ms
    tableau[:m, k : k + m] = np.eye(m)
    tableau[:m, -1] = 1.0
    tableau[m, :k] = -1.0  # reduced costs of min(-sum q)
    basis = list(range(k, k + m))

    max_iter = 200 * (m + k) + 200
    bland_after = 20 * (m + k) + 20
    for it in range(max_iter):
        costs = tableau[m, : k + m]
        if it < bland_after:
            enter = int(np.argmin(costs))
            if costs[enter] >= -tol_pivot:
                break
        else:  # Bland's rule: first improving column, guarantees termination
            improving = np.nonzero(costs < -tol_pivot)[0]
            if improving.size == 0:
                break
            enter = int(improving[0])
        col = tableau[:m, enter]
        positive = col > tol_pivot
        if not positive.any():
            raise GameError("unbounded game LP (matrix should preclude this)")
        ratios = np.full(m, np.inf)
        ratios[positive] = tableau[:m, -1][positive] / col[positive]
        leave = int(np.argmin(ratios))
        pivot = tableau[leave, enter]
        tableau[leave] /= pivot
        rows = np.arange(m + 1) != leave
        tableau[rows] -= np.outer(tableau[rows, enter], tableau[leave])
        basis[leave] = enter
    else:  # pragma: no cover - defensive
        raise GameError("simplex failed to converge")

    q = np.zeros(k)
    for row, var in enumerate(basis):
        if var < k:
            q[var] = tableau[row, -1]
    p = tableau[m, k : k + m].copy()
    return q, p


def _solve_entries(ent: np.ndarray, tol: float):
    """Raw solver on a plain entries array; returns (value, mu, nu, gap).

    Internal fast path shared with the PDE and partition modules, which
    validate their entry arrays wholesale instead of per node.
    """
    m, k = ent.shape
    if m == 1 and k == 1:
        one = np.array([1.0])
        return float(ent[0, 0]), one, one, 0.0
    shift = 1.0 - ent.min()
    q, p = _simplex_game(ent + shift)
    q = np.maximum(q, 0.0)
    p = np.maximum(p, 0.0)
    qs, ps = q.sum(), p.sum()
    if qs <= 0 or ps <= 0:  # pragma: no cover - defensive
        raise GameError("degenerate LP solution")
    nu = q / qs
    mu = p / ps
    value = 1.0 / qs - shift
    row_br = float((ent @ nu).max())
    col_br = float((mu @ ent).min())
    gap = row_br - col_br
    if gap > tol:
        raise GameError(f"saddle-point tolerance not met: duality gap {gap:.3e} > {tol:.1e}")
    # keep the reported value inside the certified best-response bracket
    value = min(max(value, col_br), row_br)
    return float(value), mu, nu, float(gap)


def _solve_oriented(ent: np.ndarray, tol: float, orientation: str):
    """Saddle solve reading the game as sup-inf or as inf-sup.

    Both orientations agree within the solver tolerance (the mixed game has
    a saddle point); they run genuinely different pivot sequences, which is
    what scheme-level value-coincidence checks exercise.
    """
    if orientation == "supinf":
        return _solve_entries(ent, tol)
    value, nu, mu, _ = _solve_entries(np.ascontiguousarray(-ent.T), tol)
    row_br = float((ent @ nu).max())
    col_br = float((mu @ ent).min())
    gap = row_br - col_br
    if gap > tol:
        raise GameError(f"saddle-point tolerance not met: duality gap {gap:.3e} > {tol:.1e}")
    return float(min(max(-value, col_br), row_br)), mu, nu, float(gap)


def solve_game(matrix: PayoffMatrix, tol: float = 1e-9) -> GameSolution:
    """Mixed-strategy saddle point of a zero-sum matrix game.

    Returns value, optimal strategies for both players and the duality gap
    measured through pure best responses.  Ties are broken by the solver's
    deterministic pivoting order; with equal inputs the output is bitwise
    reproducible.
    """
    if tol <= 0:
        raise GameError("tol must be positive")
    value, mu, nu, gap = _solve_entries(matrix.entries, tol)
    return GameSolution(value, MixedStrategy(mu), MixedStrategy(nu), gap)


# ---------------------------------------------------------------------------
# Fictitious play (verification oracle)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FictitiousPlayResult:
    value: float
    mu: MixedStrategy
    nu: MixedStrategy
    bracket_halfwidth: float
    iterations: int
    lower: float = field(default=np.nan)
    upper: float = field(default=np.nan)


@njit(cache=True)
def _fp_core(ent, max_iterations, target_halfwidth):  # pragma: no cover - jitted
    # alternating best responses: the column player reacts to the row
    # player's empirical mixture including its latest move, which converges
    # markedly faster than simultaneous updates
    m, k = ent.shape
    row_cum = np.zeros(m)  # ent @ (column empirical counts)
    col_cum = np.zeros(k)  # (row empirical counts) @ ent
    row_counts = np.zeros(m)
    col_counts = np.zeros(k)
    lb_star = -1e300
    ub_star = 1e300
    n = 0
    while n < max_iterations:
        ir = 0
        if n > 0:
            best = row_cum[0]
            for i in range(1, m):
                if row_cum[i] > best:
                    best = row_cum[i]
                    ir = i
        row_counts[ir] += 1.0
        for j in range(k):
            col_cum[j] += ent[ir, j]
        jc = 0
        worst = col_cum[0]
        for j in range(1, k):
            if col_cum[j] < worst:
                worst = col_cum[j]
                jc = j
        col_counts[jc] += 1.0
        for i in range(m):
            row_cum[i] += ent[i, jc]
        n += 1
        # running duality bracket from best responses to the empirical mixtures
        ub = row_cum[0]
        for i in range(1, m):
            if row_cum[i] > ub:
                ub = row_cum[i]
        lb = col_cum[0]
        for j in range(1, k):
            if col_cum[j] < lb:
                lb = col_cum[j]
        ub /= n
        lb /= n
        if ub < ub_star:
            ub_star = ub
        if lb > lb_star:
            lb_star = lb
        if n >= 16 and (ub_star - lb_star) * 0.5 <= target_halfwidth:
            break
    return lb_star, ub_star, n, row_counts, col_counts


def fictitious_play(
    matrix: PayoffMatrix,
    max_iterations: int = 2_000_000,
    target_halfwidth: float = 0.0,
) -> FictitiousPlayResult:
    """Fictitious-play estimate of the game value with a certified bracket.

    Players alternate best responses to the opponent's empirical mixture.
    The best-response payoffs give lower/upper bounds on the value whose
    running extrema form a certified bracket; the midpoint is reported,
    so the value error is at most ``bracket_halfwidth``.  Stops early once
    the half-width reaches ``target_halfwidth``.
    """
    ent = np.ascontiguousarray(matrix.entries, dtype=float)
    lb, ub, n, rc, cc = _fp_core(ent, max_iterations, target_halfwidth)
    mu = MixedStrategy(rc / rc.sum())
    nu = MixedStrategy(cc / cc.sum())
    return FictitiousPlayResult(
        value=0.5 * (lb + ub),
        mu=mu,
        nu=nu,
        bracket_halfwidth=0.5 * (ub - lb),
        iterations=int(n),
        lower=float(lb),
        upper=float(ub),
    )
