"""Pointwise Hamiltonians of the game: pure envelopes and relaxed value.

For a point (t, x, y, p, A) with p the gradient and A the Hessian
argument, the per-control generator value is

    0.5 * tr(sigma sigma^T(t,x,u,v) A) + b(t,x,u,v).p
        + f(t, x, y, p.sigma(t,x,u,v), u, v).

The pure envelopes take sup-inf / inf-sup over the control grids; the
relaxed value solves the induced matrix game over mixed strategies, whose
sup-inf and inf-sup coincide (bilinearity), which is what the duality gap
reports.  A is always supplied by the caller; this module never
differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsl
from .games import GameSolution, PayoffMatrix, pure_minimax, solve_game
from .problem import Problem

__all__ = [
    "HamiltonianPoint",
    "hamiltonian_value",
    "payoff_matrix",
    "relaxed_value",
    "pure_bounds",
]


@dataclass(frozen=True)
class HamiltonianPoint:
    t: float
    x: np.ndarray  # (d,)
    y: float
    p: np.ndarray  # (d,)
    A: np.ndarray  # (d, d) symmetric

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if x.shape != p.shape or A.shape != (x.size, x.size):
            raise ValueError(
                f"inconsistent shapes: x {x.shape}, p {p.shape}, A {A.shape}"
            )
        for arr in (x, p, A):
            if not np.all(np.isfinite(arr)):
                raise ValueError("Hamiltonian point has non-finite entries")
        if not np.isfinite(self.t) or not np.isfinite(self.y):
            raise ValueError("Hamiltonian point has non-finite entries")
        if np.max(np.abs(A - A.T)) > 1e-12:
            raise ValueError("A must be symmetric within 1e-12")
        for arr in (x, p, A):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "A", A)

    @property
    def d(self) -> int:
        return self.x.size


def _point_bindings(pt: HamiltonianPoint, prob: Problem, u_idx: int, v_idx: int):
    bnd = prob.state_bindings(pt.t, pt.x)
    bnd.update(prob.control_bindings(u_idx, v_idx))
    return bnd


def hamiltonian_value(pt: HamiltonianPoint, prob: Problem, u_idx: int, v_idx: int) -> float:
    """Generator value for one pure control pair."""
    bnd = _point_bindings(pt, prob, u_idx, v_idx)
    b = np.array([dsl.evaluate(e, bnd) for e in prob.b], dtype=float)
    sig = np.array([[dsl.evaluate(e, bnd) for e in row] for row in prob.sigma], dtype=float)
    z = pt.p @ sig
    bnd["y"] = pt.y
    for i, name in enumerate(prob.z_names()):
        bnd[name] = z[i]
    fval = float(dsl.evaluate(prob.f, bnd))
    return float(0.5 * np.trace(sig @ sig.T @ pt.A) + b @ pt.p + fval)


def payoff_matrix(pt: HamiltonianPoint, prob: Problem) -> PayoffMatrix:
    """Matrix of generator values over the control grids.

    The bilinear extension to mixed strategies (mu, nu) is exactly
    mu^T M nu, so matrix-game machinery applies directly.
    """
    m, k = prob.u_grid.n, prob.v_grid.n
    ent = np.empty((m, k))
    for iu in range(m):
        for iv in range(k):
            ent[iu, iv] = hamiltonian_value(pt, prob, iu, iv)
    return PayoffMatrix(ent)


def relaxed_value(pt: HamiltonianPoint, prob: Problem, tol: float = 1e-9) -> GameSolution:
    """Saddle value over mixed strategies; sup-inf = inf-sup within tol."""
    return solve_game(payoff_matrix(pt, prob), tol=tol)


def pure_bounds(pt: HamiltonianPoint, prob: Problem) -> tuple[float, float]:
    """(sup-inf, inf-sup) over pure control pairs."""
    return pure_minimax(payoff_matrix(pt, prob))
