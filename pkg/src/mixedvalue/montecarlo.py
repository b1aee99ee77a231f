"""Monte Carlo simulation of the game with randomized controls.

Controls are piecewise constant along the partition: at the left endpoint
of every subinterval each player draws a control from their mixed strategy
using a private randomization stream, the two draws being independent of
each other and of the driving Brownian increments.  The state then follows
Euler-Maruyama substeps with the frozen control pair.

Streams come from a counter-based generator (Philox) keyed by the master
seed with the counter encoding (role, subinterval); within a stream, path
``i`` owns a fixed-size block at offset ``i``, so any slice of paths can be
regenerated bitwise by advancing the counter, independently of how work is
scheduled.  Normals are produced from uniforms by Box-Muller so every path
consumes a deterministic number of raw draws (ziggurat sampling would not).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from . import dsl
from .games import MixedStrategy
from .pde import SpaceGrid
from .partition import Partition, SweepResult
from .problem import Problem

__all__ = [
    "RandomizationDevice",
    "StrategyProfile",
    "PathEnsemble",
    "PayoffEstimate",
    "ExploitResult",
    "simulate",
    "estimate_payoff",
    "exploit",
]

_ROLE_BROWNIAN = 0
_ROLE_PLAYER1 = 1
_ROLE_PLAYER2 = 2
_ROLE_EXPLORE = 3


class RandomizationDevice:
    """Reproducible independent randomization streams.

    Distinct (role, subinterval) indices select statistically independent
    Philox streams; distinct path indices address disjoint blocks within a
    stream.  Everything is reproducible from (master seed, indices) alone.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _raw_blocks(self, role: int, subinterval: int, block_start: int,
                    n_paths: int, blocks_per_path: int) -> np.ndarray:
        """(n_paths, 4*blocks_per_path) raw uniforms, path-addressable.

        Philox advances in counter blocks of 4 draws, so per-path strides
        are whole blocks and ``advance`` lands exactly on a path boundary.
        """
        bg = Philox(key=self.seed, counter=[0, 0, role, subinterval])
        if block_start:
            bg.advance(block_start * blocks_per_path)
        raw = Generator(bg).random(n_paths * blocks_per_path * 4)
        return raw.reshape(n_paths, blocks_per_path * 4)

    def control_uniforms(self, subinterval: int, player: int, path_start: int,
                         n_paths: int) -> np.ndarray:
        """One uniform per path for the given player's control draw."""
        if player not in (1, 2):
            raise ValueError("player must be 1 or 2")
        role = _ROLE_PLAYER1 if player == 1 else _ROLE_PLAYER2
        return self._raw_blocks(role, subinterval, path_start, n_paths, 1)[:, 0]

    def brownian_normals(self, subinterval: int, path_start: int, n_paths: int,
                         substeps: int, d: int) -> np.ndarray:
        """Standard normals of shape (n_paths, substeps, d), Box-Muller.

        Each path consumes a fixed number of whole counter blocks, so path
        slices are bitwise independent of batching.
        """
        per_path = substeps * d
        blocks = (per_path + 3) // 4
        raw = self._raw_blocks(_ROLE_BROWNIAN, subinterval, path_start, n_paths, blocks)
        z = _box_muller(raw)[:, :per_path]
        return z.reshape(n_paths, substeps, d)

    def exploration_normals(self, subinterval: int, n_samples: int,
                            substeps: int, d: int) -> np.ndarray:
        """Common-random-number normals for exploitability estimation."""
        per = substeps * d
        blocks = (per + 3) // 4
        raw = self._raw_blocks(_ROLE_EXPLORE, subinterval, 0, n_samples, blocks)
        z = _box_muller(raw)[:, :per]
        return z.reshape(n_samples, substeps, d)


def _box_muller(u: np.ndarray) -> np.ndarray:
    """Pairs of uniforms to pairs of normals, fixed consumption."""
    u1 = np.clip(u[..., 0::2], 1e-300, 1.0)
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty_like(u)
    out[..., 0::2] = r * np.cos(theta)
    out[..., 1::2] = r * np.sin(theta)
    return out


# ---------------------------------------------------------------------------
# Strategy profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrategyProfile:
    """Per-subinterval mixed strategies for both players.

    ``openloop`` weights have shape (n_subintervals, n_controls); in
    ``feedback`` mode they are (n_subintervals, n_cells, n_controls) and
    the cell is located from the state at the subinterval's left endpoint
    (cells are nearest-node regions of ``cell_axis``; d=1 only).
    """

    mode: str
    u_weights: np.ndarray
    v_weights: np.ndarray
    cell_axis: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("openloop", "feedback"):
            raise ValueError(f"unknown profile mode {self.mode!r}")
        uw = np.asarray(self.u_weights, dtype=float)
        vw = np.asarray(self.v_weights, dtype=float)
        want = 2 if self.mode == "openloop" else 3
        if uw.ndim != want or vw.ndim != want:
            raise ValueError(f"{self.mode} weights must be {want}-d arrays")
        if uw.shape[:-1] != vw.shape[:-1]:
            raise ValueError("player weight shapes disagree")
        for w, who in ((uw, "u"), (vw, "v")):
            if np.any(w < -1e-12) or np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-9):
                raise ValueError(f"{who} weights must be probability vectors")
        if self.mode == "feedback":
            if self.cell_axis is None:
                raise ValueError("feedback profiles need a cell_axis")
            ax = np.asarray(self.cell_axis, dtype=float)
            if ax.ndim != 1 or ax.size != uw.shape[1]:
                raise ValueError("cell_axis must match the cell dimension of the weights")
            object.__setattr__(self, "cell_axis", ax)
        object.__setattr__(self, "u_weights", uw)
        object.__setattr__(self, "v_weights", vw)

    @property
    def n_subintervals(self) -> int:
        return self.u_weights.shape[0]

    @classmethod
    def uniform(cls, prob: Problem, n_subintervals: int) -> "StrategyProfile":
        uw = np.full((n_subintervals, prob.u_grid.n), 1.0 / prob.u_grid.n)
        vw = np.full((n_subintervals, prob.v_grid.n), 1.0 / prob.v_grid.n)
        return cls("openloop", uw, vw)

    @classmethod
    def openloop(cls, u_strats, v_strats) -> "StrategyProfile":
        uw = np.stack([s.weights if isinstance(s, MixedStrategy) else np.asarray(s)
                       for s in u_strats])
        vw = np.stack([s.weights if isinstance(s, MixedStrategy) else np.asarray(s)
                       for s in v_strats])
        return cls("openloop", uw, vw)

    @classmethod
    def point_mass(cls, prob: Problem, n_subintervals: int, u_idx: int,
                   v_idx: int) -> "StrategyProfile":
        uw = np.zeros((n_subintervals, prob.u_grid.n))
        vw = np.zeros((n_subintervals, prob.v_grid.n))
        uw[:, u_idx] = 1.0
        vw[:, v_idx] = 1.0
        return cls("openloop", uw, vw)

    @classmethod
    def from_sweep(cls, result: SweepResult, grid: SpaceGrid) -> "StrategyProfile":
        """Feedback profile from the recorded per-node saddle strategies."""
        if result.mu is None or result.nu is None:
            raise ValueError("sweep was run without record_strategies=True")
        if result.mu.ndim != 3:
            raise ValueError("feedback profiles are supported for d=1 only")
        if grid.d != 1:
            raise ValueError("feedback profiles are supported for d=1 only")
        axis = grid.axes[0]
        work_axis = axis[1:-1] if result.mu.shape[1] == axis.size - 2 else axis[:-1]
        return cls("feedback", result.mu, result.nu, cell_axis=work_axis)

    def weights_at(self, subinterval: int, player: int, x: np.ndarray) -> np.ndarray:
        """Weights for every path given states at the left endpoint."""
        w = self.u_weights if player == 1 else self.v_weights
        if self.mode == "openloop":
            return np.broadcast_to(w[subinterval], (x.shape[0], w.shape[-1]))
        cells = np.clip(
            np.searchsorted(self.cell_axis, x[:, 0]),
            0, self.cell_axis.size - 1,
        )
        # nearest-node cells: searchsorted gives the right neighbor index
        left = np.clip(cells - 1, 0, self.cell_axis.size - 1)
        use_left = np.abs(self.cell_axis[left] - x[:, 0]) <= np.abs(self.cell_axis[cells] - x[:, 0])
        cells = np.where(use_left, left, cells)
        return w[subinterval][cells]

    def to_jsonable(self) -> dict:
        out = {
            "mode": self.mode,
            "u_weights": self.u_weights.tolist(),
            "v_weights": self.v_weights.tolist(),
        }
        if self.cell_axis is not None:
            out["cell_axis"] = self.cell_axis.tolist()
        return out

    @classmethod
    def from_jsonable(cls, data: dict) -> "StrategyProfile":
        axis = data.get("cell_axis")
        return cls(
            data["mode"],
            np.asarray(data["u_weights"], dtype=float),
            np.asarray(data["v_weights"], dtype=float),
            cell_axis=None if axis is None else np.asarray(axis, dtype=float),
        )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated forward paths with their control draws.

    ``states`` has shape (n_paths, n_sub*substeps + 1, d); draws are grid
    indices per subinterval; ``running_cost`` integrates f along each path
    (left-endpoint rule, meaningful when f is free of (y, z)).
    """

    states: np.ndarray
    u_indices: np.ndarray
    v_indices: np.ndarray
    running_cost: np.ndarray
    partition: Partition
    euler_substeps: int
    x0: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


def _draw_indices(uniforms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw, one per path (weights per path)."""
    cum = np.cumsum(weights, axis=1)
    cum[:, -1] = 1.0
    return (uniforms[:, None] > cum).sum(axis=1)


def _coeff_arrays(prob, t, x, iu_scalar, iv_scalar):
    bnd = {"t": t}
    for i, name in enumerate(prob.x_names()):
        bnd[name] = x[:, i]
    bnd.update(prob.control_bindings(iu_scalar, iv_scalar))
    b = np.empty_like(x)
    for i, e in enumerate(prob.b):
        b[:, i] = dsl.evaluate(e, bnd)
    sig = np.empty(x.shape + (prob.d,))
    for i, row in enumerate(prob.sigma):
        for j, e in enumerate(row):
            sig[:, i, j] = dsl.evaluate(e, bnd)
    return b, sig


def _running_cost_values(prob, t, x, iu_scalar, iv_scalar):
    bnd = {"t": t, "y": 0.0}
    for i, name in enumerate(prob.x_names()):
        bnd[name] = x[:, i]
    for name in prob.z_names():
        bnd[name] = 0.0
    bnd.update(prob.control_bindings(iu_scalar, iv_scalar))
    return np.broadcast_to(np.asarray(dsl.evaluate(prob.f, bnd), dtype=float), x.shape[:1])


def simulate(prob: Problem, pi: Partition, profile: StrategyProfile, x0,
             n_paths: int, euler_substeps: int, device: RandomizationDevice) -> PathEnsemble:
    """Simulate randomized-control paths along the partition.

    Per subinterval: both players draw controls at the left endpoint from
    their private streams (conditionally independent given the past, and
    state-dependent in feedback mode), then the state advances with
    ``euler_substeps`` Euler-Maruyama steps under the frozen pair.
    """
    if n_paths < 1 or euler_substeps < 1:
        raise ValueError("need n_paths >= 1 and euler_substeps >= 1")
    if profile.n_subintervals != pi.n:
        raise ValueError(
            f"profile has {profile.n_subintervals} subintervals, partition has {pi.n}"
        )
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != prob.d:
        raise ValueError(f"x0 has dimension {x0.size}, expected {prob.d}")

    n_controls_u = prob.u_grid.n
    n_controls_v = prob.v_grid.n
    states = np.empty((n_paths, pi.n * euler_substeps + 1, prob.d))
    states[:, 0] = x0
    u_idx = np.empty((n_paths, pi.n), dtype=np.int64)
    v_idx = np.empty((n_paths, pi.n), dtype=np.int64)
    cost = np.zeros(n_paths)

    x = np.tile(x0, (n_paths, 1))
    col = 0
    for j in range(pi.n):
        t_left, t_right = pi.times[j], pi.times[j + 1]
        delta = (t_right - t_left) / euler_substeps
        uw = profile.weights_at(j, 1, x)
        vw = profile.weights_at(j, 2, x)
        du = _draw_indices(device.control_uniforms(j, 1, 0, n_paths), uw)
        dv = _draw_indices(device.control_uniforms(j, 2, 0, n_paths), vw)
        u_idx[:, j] = du
        v_idx[:, j] = dv
        normals = device.brownian_normals(j, 0, n_paths, euler_substeps, prob.d)
        sqdt = math.sqrt(delta)
        for s in range(euler_substeps):
            t = t_left + s * delta
            new_x = np.empty_like(x)
            for iu in range(n_controls_u):
                for iv in range(n_controls_v):
                    sel = (du == iu) & (dv == iv)
                    if not sel.any():
                        continue
                    xs = x[sel]
                    b, sig = _coeff_arrays(prob, t, xs, iu, iv)
                    cost[sel] += delta * _running_cost_values(prob, t, xs, iu, iv)
                    dw = normals[sel, s, :] * sqdt
                    new_x[sel] = xs + b * delta + np.einsum("nij,nj->ni", sig, dw)
            x = new_x
            col += 1
            states[:, col] = x
            if not np.all(np.isfinite(x)):
                bad = np.argwhere(~np.isfinite(x))[0]
                raise ArithmeticError(
                    f"non-finite state at path {int(bad[0])}, subinterval {j}, substep {s}"
                )
    return PathEnsemble(
        states=states,
        u_indices=u_idx,
        v_indices=v_idx,
        running_cost=cost,
        partition=pi,
        euler_substeps=euler_substeps,
        x0=x0,
        seed=device.seed,
    )


# ---------------------------------------------------------------------------
# Payoff estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PayoffEstimate:
    mean: float
    std_error: float
    n_paths: int


class ClassicalCaseError(ValueError):
    """f depends on y or z: expected payoffs need the PDE route."""


def _check_classical(prob: Problem, rel_tol: float = 1e-8) -> None:
    rng = np.random.default_rng(7)
    n = 16
    t = rng.uniform(0, prob.T, n)
    x = rng.uniform(prob.domain.x_min, prob.domain.x_max, (n, prob.d))
    iu = rng.integers(0, prob.u_grid.n, n)
    iv = rng.integers(0, prob.v_grid.n, n)
    y = rng.normal(size=n)
    z = rng.normal(size=(n, prob.d))

    def fv(yv, zv):
        bnd = {"t": t, "y": yv}
        for i, name in enumerate(prob.x_names()):
            bnd[name] = x[:, i]
        for i, name in enumerate(prob.z_names()):
            bnd[name] = zv[:, i] if zv.ndim == 2 else zv
        up = prob.u_grid.points[iu]
        vp = prob.v_grid.points[iv]
        for i, name in enumerate(prob.u_names()):
            bnd[name] = up[:, i]
        for i, name in enumerate(prob.v_names()):
            bnd[name] = vp[:, i]
        return np.asarray(dsl.evaluate(prob.f, bnd), dtype=float)

    base = fv(np.zeros(n), np.zeros((n, prob.d)))
    scale = 1.0 + np.abs(base)
    if np.any(np.abs(fv(y, np.zeros((n, prob.d))) - base) / scale > rel_tol) or np.any(
        np.abs(fv(np.zeros(n), z) - base) / scale > rel_tol
    ):
        raise ClassicalCaseError(
            "running cost depends on y or z; expected-payoff Monte Carlo only "
            "covers the classical case (use the PDE or partition solvers instead)"
        )


def estimate_payoff(ensemble: PathEnsemble, prob: Problem) -> PayoffEstimate:
    """Sample mean and standard error of terminal plus running cost.

    Requires the classical case (f free of y and z), enforced by a
    finite-difference probe.  The reduction is numpy pairwise summation,
    deterministic for a fixed ensemble.
    """
    _check_classical(prob)
    xb = {name: ensemble.states[:, -1, i] for i, name in enumerate(prob.x_names())}
    payoff = np.asarray(dsl.evaluate(prob.phi, xb), dtype=float)
    payoff = np.broadcast_to(payoff, (ensemble.n_paths,)) + ensemble.running_cost
    mean = float(np.mean(payoff))
    if ensemble.n_paths > 1:
        se = float(np.std(payoff, ddof=1) / math.sqrt(ensemble.n_paths))
    else:
        se = 0.0
    return PayoffEstimate(mean=mean, std_error=se, n_paths=ensemble.n_paths)


# ---------------------------------------------------------------------------
# Exploitability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExploitResult:
    gain: float
    best_response_value: float
    baseline: PayoffEstimate
    free_player: int


def exploit(prob: Problem, pi: Partition, fixed_side: str, fixed_profile: StrategyProfile,
            x0, n_paths: int, device: RandomizationDevice, n_cells: int = 41,
            kernel_paths: int = 256, euler_substeps: int = 4) -> ExploitResult:
    """Estimated gain of the best Markov deviation against a fixed profile.

    ``fixed_side`` names the player held to the profile; the other player
    optimizes over pure controls per (subinterval, state cell) by backward
    induction on a Monte Carlo transition kernel built with common random
    numbers (one noise batch per subinterval shared across cells and
    controls).  The baseline is both players following the profile.
    """
    if fixed_side not in ("player1", "player2"):
        raise ValueError("fixed_side must be 'player1' or 'player2'")
    if prob.d != 1:
        raise ValueError("exploitability estimation is implemented for d=1 only")
    _check_classical(prob)
    free = 2 if fixed_side == "player1" else 1

    baseline = estimate_payoff(
        simulate(prob, pi, fixed_profile, x0, n_paths, euler_substeps, device), prob
    )

    cells = np.linspace(prob.domain.x_min[0], prob.domain.x_max[0], n_cells)
    n_u, n_v = prob.u_grid.n, prob.v_grid.n
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    # terminal values on the cell grid
    values = np.asarray(dsl.evaluate(prob.phi, {"x1": cells}), dtype=float)
    values = np.broadcast_to(values, cells.shape).copy()

    for j in range(pi.n - 1, -1, -1):
        t_left, t_right = pi.times[j], pi.times[j + 1]
        delta = (t_right - t_left) / euler_substeps
        noise = device.exploration_normals(j, kernel_paths, euler_substeps, 1)[:, :, 0]
        q = np.empty((n_cells, n_u, n_v))
        for ic, xc in enumerate(cells):
            for iu in range(n_u):
                for iv in range(n_v):
                    xs = np.full((kernel_paths, 1), xc)
                    reward = np.zeros(kernel_paths)
                    for s in range(euler_substeps):
                        t = t_left + s * delta
                        b, sig = _coeff_arrays(prob, t, xs, iu, iv)
                        reward += delta * _running_cost_values(prob, t, xs, iu, iv)
                        xs = xs + b * delta + sig[:, :, 0] * (
                            noise[:, s, None] * math.sqrt(delta)
                        )
                    nxt = np.interp(xs[:, 0], cells, values)
                    q[ic, iu, iv] = float(np.mean(reward + nxt))
        uw = fixed_profile.weights_at(j, 1, cells[:, None])
        vw = fixed_profile.weights_at(j, 2, cells[:, None])
        if free == 1:
            expected = np.einsum("cuv,cv->cu", q, vw)
            values = expected.max(axis=1)
        else:
            expected = np.einsum("cuv,cu->cv", q, uw)
            values = expected.min(axis=1)

    br_value = float(np.interp(x0[0], cells, values))
    gain = br_value - baseline.mean if free == 1 else baseline.mean - br_value
    return ExploitResult(
        gain=float(gain),
        best_response_value=br_value,
        baseline=baseline,
        free_player=free,
    )
