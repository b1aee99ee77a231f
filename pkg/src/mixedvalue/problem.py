"""Game instances: coefficients, control grids, horizon, truncated domain.

A problem bundles drift ``b``, diffusion ``sigma``, running cost ``f`` and
terminal cost ``phi`` (all as parsed coefficient expressions), the two
finite control grids, the time horizon, a truncated spatial box and a set
of user-declared bounds used for CFL limits and regularity tests.

The solvers require one of two structural modes:

* ``sigma_uncontrolled``: the diffusion does not reference the controls;
* ``f_linear_in_z``: the running cost has the shape f0(t,x,y,u,v) + f1(t).z
  (validated by a finite-difference linearity probe).

Catalog problems carry exact finite control sets so no control
discretization error enters the benchmarks.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import dsl

__all__ = [
    "ControlGrid",
    "Domain",
    "Bounds",
    "Problem",
    "FrozenCoefficients",
    "ProblemError",
    "ConditionViolationError",
    "load_problem",
    "freeze",
    "catalog_names",
    "CATALOG",
    "value_bound",
    "interior_margin",
    "interior_window",
    "time_modulus_bound",
]


class ProblemError(ValueError):
    pass


class ConditionViolationError(ProblemError):
    """A coefficient violates the declared structural mode."""


@dataclass(frozen=True)
class ControlGrid:
    """Finite set of control points for one player ('U' or 'V')."""

    points: np.ndarray  # (n_points, q)
    label: str

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise ProblemError(f"control grid {self.label} is empty")
        if not np.all(np.isfinite(pts)):
            raise ProblemError(f"control grid {self.label} has non-finite points")
        if len({tuple(row) for row in pts}) != pts.shape[0]:
            raise ProblemError(f"control grid {self.label} has duplicate points")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.label not in ("U", "V"):
            raise ProblemError(f"control grid label must be 'U' or 'V', got {self.label!r}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def q(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Domain:
    x_min: np.ndarray
    x_max: np.ndarray
    boundary_mode: str = "clamp"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.x_min, dtype=float))
        hi = np.atleast_1d(np.asarray(self.x_max, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ProblemError("domain bounds must be vectors of equal length")
        if not np.all(lo < hi):
            raise ProblemError("domain requires x_min < x_max componentwise")
        for arr in (lo, hi):
            arr.flags.writeable = False
        object.__setattr__(self, "x_min", lo)
        object.__setattr__(self, "x_max", hi)
        if self.boundary_mode not in ("clamp", "periodic"):
            raise ProblemError(f"unknown boundary mode {self.boundary_mode!r}")


@dataclass(frozen=True)
class Bounds:
    """User-declared coefficient bounds, trusted for CFL and regularity."""

    sup_b: float
    sup_sigma: float
    lip_y_f: float
    sup_f: float
    lip_phi: float
    sup_phi: float
    value_lip: float

    _FIELDS = ("sup_b", "sup_sigma", "lip_y_f", "sup_f", "lip_phi", "sup_phi", "value_lip")

    @classmethod
    def from_mapping(cls, data) -> "Bounds":
        missing = [k for k in cls._FIELDS if k not in data]
        if missing:
            raise ProblemError(f"bounds missing keys: {missing}")
        return cls(**{k: float(data[k]) for k in cls._FIELDS})


@dataclass(frozen=True)
class FrozenCoefficients:
    b: np.ndarray  # (d,)
    sigma: np.ndarray  # (d, d)
    sigma_sigma_t: np.ndarray  # (d, d), symmetric PSD by construction


@dataclass(frozen=True)
class Problem:
    name: str
    d: int
    T: float
    b: tuple  # d expressions
    sigma: tuple  # d x d expressions
    f: dsl.Expr
    phi: dsl.Expr
    u_grid: ControlGrid
    v_grid: ControlGrid
    domain: Domain
    condition41_mode: str
    bounds: Bounds
    b_src: tuple = ()
    sigma_src: tuple = ()
    f_src: str = ""
    phi_src: str = ""

    # -- variable naming helpers ------------------------------------------

    def x_names(self):
        return tuple(f"x{i + 1}" for i in range(self.d))

    def z_names(self):
        return tuple(f"z{i + 1}" for i in range(self.d))

    def u_names(self):
        return tuple(f"u{i + 1}" for i in range(self.u_grid.q))

    def v_names(self):
        return tuple(f"v{i + 1}" for i in range(self.v_grid.q))

    def control_bindings(self, u_idx: int, v_idx: int) -> dict:
        out = {}
        for name, val in zip(self.u_names(), self.u_grid.points[u_idx]):
            out[name] = val
        for name, val in zip(self.v_names(), self.v_grid.points[v_idx]):
            out[name] = val
        return out

    def state_bindings(self, t, x) -> dict:
        x = np.atleast_1d(x)
        out = {"t": t}
        for i, name in enumerate(self.x_names()):
            out[name] = x[i]
        return out


# ---------------------------------------------------------------------------
# Derived quantities
# ---------------------------------------------------------------------------


def value_bound(prob: Problem) -> float:
    """A-priori sup bound on any value field (discrete Gronwall form)."""
    bd = prob.bounds
    return bd.sup_phi + prob.T * bd.sup_f * math.exp(bd.lip_y_f * prob.T)


def interior_margin(prob: Problem) -> float:
    """Width of the boundary strip excluded from error measurements."""
    bd = prob.bounds
    return bd.sup_b * prob.T + 4.0 * bd.sup_sigma * math.sqrt(prob.T)


def interior_window(prob: Problem) -> tuple[np.ndarray, np.ndarray]:
    m = interior_margin(prob)
    lo = prob.domain.x_min + m
    hi = prob.domain.x_max - m
    if not np.all(lo < hi):
        raise ProblemError(
            "domain too small: interior window is empty after shrinking by "
            f"{m:.3g} per side"
        )
    return lo, hi


def time_modulus_bound(prob: Problem) -> float:
    """Declared bound on sup_x |W(t_j,x)-W(t_{j-1},x)| / sqrt(dt)."""
    bd = prob.bounds
    return 4.0 * (bd.sup_f + bd.sup_sigma * bd.value_lip)


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------


def _parse_coeff(src: str, allowed, what: str):
    try:
        return dsl.parse(src, allowed)
    except dsl.ExpressionError as exc:
        raise ProblemError(f"cannot parse {what}: {exc}") from exc


def _require(cfg, key):
    if key not in cfg:
        raise ProblemError(f"missing required key {key!r} in problem config")
    return cfg[key]


def load_problem(source) -> "Problem":
    """Load and eagerly validate a problem.

    ``source`` may be a catalog name, a path to a JSON file, a JSON string
    or an already-parsed mapping.
    """
    if isinstance(source, str):
        if source in CATALOG:
            cfg = CATALOG[source]
        elif os.path.exists(source):
            with open(source, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        else:
            try:
                cfg = json.loads(source)
            except json.JSONDecodeError:
                raise ProblemError(
                    f"{source!r} is not a catalog name ({sorted(CATALOG)}), "
                    "an existing file, or valid JSON"
                ) from None
    elif isinstance(source, dict):
        cfg = source
    else:
        raise ProblemError(f"unsupported problem source {type(source)!r}")
    return _build_problem(cfg)


def _build_problem(cfg: dict) -> Problem:
    name = cfg.get("name", "unnamed")
    d = int(_require(cfg, "d"))
    if d not in (1, 2):
        raise ProblemError(f"state dimension must be 1 or 2, got {d}")
    if "T" in cfg:
        horizon = float(cfg["T"])
    elif "horizon" in cfg:
        horizon = float(cfg["horizon"])
    else:
        raise ProblemError("missing required key 'T' (alias 'horizon')")
    if horizon <= 0:
        raise ProblemError("horizon must be positive")

    u_grid = ControlGrid(np.asarray(_require(cfg, "U")["points"], dtype=float), "U")
    v_grid = ControlGrid(np.asarray(_require(cfg, "V")["points"], dtype=float), "V")

    dom_cfg = _require(cfg, "domain")
    domain = Domain(
        np.asarray(_require(dom_cfg, "min"), dtype=float),
        np.asarray(_require(dom_cfg, "max"), dtype=float),
        dom_cfg.get("boundary", "clamp"),
    )
    if domain.x_min.size != d:
        raise ProblemError(f"domain dimension {domain.x_min.size} does not match d={d}")

    mode = _require(cfg, "condition41_mode")
    if mode not in ("sigma_uncontrolled", "f_linear_in_z"):
        raise ProblemError(f"unknown condition41_mode {mode!r}")

    bounds = Bounds.from_mapping(_require(cfg, "bounds"))

    x_names = tuple(f"x{i + 1}" for i in range(d))
    z_names = tuple(f"z{i + 1}" for i in range(d))
    u_names = tuple(f"u{i + 1}" for i in range(u_grid.q))
    v_names = tuple(f"v{i + 1}" for i in range(v_grid.q))
    coeff_vars = ("t",) + x_names + u_names + v_names
    f_vars = ("t",) + x_names + ("y",) + z_names + u_names + v_names

    b_src = tuple(_require(cfg, "b"))
    if len(b_src) != d:
        raise ProblemError(f"b must list {d} expressions, got {len(b_src)}")
    b = tuple(_parse_coeff(s, coeff_vars, f"b[{i}]") for i, s in enumerate(b_src))

    sigma_rows = _require(cfg, "sigma")
    if len(sigma_rows) != d or any(len(r) != d for r in sigma_rows):
        raise ProblemError(f"sigma must be a {d}x{d} array of expressions")
    sigma_src = tuple(tuple(row) for row in sigma_rows)
    sigma = tuple(
        tuple(_parse_coeff(s, coeff_vars, f"sigma[{i}][{j}]") for j, s in enumerate(row))
        for i, row in enumerate(sigma_src)
    )

    f_src = _require(cfg, "f")
    f = _parse_coeff(f_src, f_vars, "f")
    phi_src = _require(cfg, "phi")
    phi = _parse_coeff(phi_src, x_names, "phi")

    prob = Problem(
        name=name,
        d=d,
        T=horizon,
        b=b,
        sigma=sigma,
        f=f,
        phi=phi,
        u_grid=u_grid,
        v_grid=v_grid,
        domain=domain,
        condition41_mode=mode,
        bounds=bounds,
        b_src=b_src,
        sigma_src=sigma_src,
        f_src=f_src,
        phi_src=phi_src,
    )
    _validate(prob)
    return prob


def _validate(prob: Problem) -> None:
    control_vars = set(prob.u_names()) | set(prob.v_names())
    if prob.condition41_mode == "sigma_uncontrolled":
        for i, row in enumerate(prob.sigma):
            for j, e in enumerate(row):
                used = dsl.free_variables(e) & control_vars
                if used:
                    raise ConditionViolationError(
                        f"sigma[{i}][{j}] references control variables {sorted(used)} "
                        "under condition41_mode=sigma_uncontrolled"
                    )
    else:
        _probe_f_linear_in_z(prob)

    rng = np.random.default_rng(0)
    pts = _sample_points(prob, rng, 1000)
    try:
        _eval_all_coefficients(prob, pts)
    except dsl.EvaluationError as exc:
        raise ProblemError(f"coefficient fails to evaluate on the domain: {exc}") from exc

    _cross_check_bounds(prob, rng)
    if prob.d == 2:
        _check_diagonal_dominance(prob, rng)


def _sample_points(prob: Problem, rng, n: int):
    t = rng.uniform(0.0, prob.T, size=n)
    x = rng.uniform(prob.domain.x_min, prob.domain.x_max, size=(n, prob.d))
    iu = rng.integers(0, prob.u_grid.n, size=n)
    iv = rng.integers(0, prob.v_grid.n, size=n)
    y = rng.normal(size=n)
    z = rng.normal(size=(n, prob.d))
    return t, x, iu, iv, y, z


def _bindings(prob: Problem, t, x, iu, iv, y=None, z=None):
    out = {"t": t}
    for i, name in enumerate(prob.x_names()):
        out[name] = x[..., i]
    up = prob.u_grid.points[iu]
    vp = prob.v_grid.points[iv]
    for i, name in enumerate(prob.u_names()):
        out[name] = up[..., i]
    for i, name in enumerate(prob.v_names()):
        out[name] = vp[..., i]
    if y is not None:
        out["y"] = y
    if z is not None:
        for i, name in enumerate(prob.z_names()):
            out[name] = z[..., i]
    return out

def _eval_all_coefficients(prob: Problem, pts):
    t, x, iu, iv, y, z = pts
    bnd = _bindings(prob, t, x, iu, iv, y, z)
    for e in prob.b:
        dsl.evaluate(e, bnd)
    for row in prob.sigma:
        for e in row:
            dsl.evaluate(e, bnd)
    dsl.evaluate(prob.f, bnd)
    xb = {name: x[..., i] for i, name in enumerate(prob.x_names())}
    dsl.evaluate(prob.phi, xb)


def _probe_f_linear_in_z(prob: Problem, n_points: int = 10, rel_tol: float = 1e-8) -> None:
    """Check f = f0(t,x,y,u,v) + f1(t).z by finite differences.

    Probes (a) vanishing second differences along random z directions and
    (b) equality of the z gradient across random (x, y, u, v) at fixed t.
    """
    rng = np.random.default_rng(1)
    t, x, iu, iv, y, z = _sample_points(prob, rng, n_points)
    h = 0.5
    scale = 1.0 + np.abs(_f_eval(prob, t, x, iu, iv, y, z))
    for _ in range(2):
        direction = rng.normal(size=(n_points, prob.d))
        up = _f_eval(prob, t, x, iu, iv, y, z + h * direction)
        dn = _f_eval(prob, t, x, iu, iv, y, z - h * direction)
        mid = _f_eval(prob, t, x, iu, iv, y, z)
        second = np.abs(up + dn - 2.0 * mid) / scale
        if np.any(second > rel_tol):
            raise ConditionViolationError(
                "f is not linear in z (second difference "
                f"{second.max():.3e} exceeds {rel_tol:.1e}) "
                "under condition41_mode=f_linear_in_z"
            )
    # gradient in z must not depend on (x, y, u, v)
    x2 = rng.uniform(prob.domain.x_min, prob.domain.x_max, size=(n_points, prob.d))
    iu2 = rng.integers(0, prob.u_grid.n, size=n_points)
    iv2 = rng.integers(0, prob.v_grid.n, size=n_points)
    y2 = rng.normal(size=n_points)
    for axis in range(prob.d):
        e = np.zeros((1, prob.d))
        e[0, axis] = h
        g1 = (_f_eval(prob, t, x, iu, iv, y, z + e) - _f_eval(prob, t, x, iu, iv, y, z)) / h
        g2 = (_f_eval(prob, t, x2, iu2, iv2, y2, z + e) - _f_eval(prob, t, x2, iu2, iv2, y2, z)) / h
        if np.any(np.abs(g1 - g2) / scale > rel_tol):
            raise ConditionViolationError(
                "the z coefficient of f depends on (x, y, u, v); expected the "
                "shape f0(t,x,y,u,v) + f1(t).z under condition41_mode=f_linear_in_z"
            )


def _f_eval(prob, t, x, iu, iv, y, z):
    return np.asarray(dsl.evaluate(prob.f, _bindings(prob, t, x, iu, iv, y, z)), dtype=float)


def _cross_check_bounds(prob: Problem, rng, n: int = 10_000) -> None:
    # sup_f is declared for f(., y=0, z=0, .); lip_y_f covers the y growth
    t, x, iu, iv, _, z = _sample_points(prob, rng, n)
    bnd = _bindings(prob, t, x, iu, iv, np.zeros(n), np.zeros_like(z))
    sup_b = max(
        (float(np.max(np.abs(dsl.evaluate(e, bnd)))) for e in prob.b),
        default=0.0,
    )
    sup_sigma = max(
        float(np.max(np.abs(dsl.evaluate(e, bnd)))) for row in prob.sigma for e in row
    )
    sup_f0 = float(np.max(np.abs(dsl.evaluate(prob.f, bnd))))
    msgs = []
    if sup_b > prob.bounds.sup_b * (1 + 1e-9) + 1e-12:
        msgs.append(f"|b| reaches {sup_b:.4g} > declared sup_b={prob.bounds.sup_b:.4g}")
    if sup_sigma > prob.bounds.sup_sigma * (1 + 1e-9) + 1e-12:
        msgs.append(
            f"|sigma| reaches {sup_sigma:.4g} > declared sup_sigma={prob.bounds.sup_sigma:.4g}"
        )
    if sup_f0 > prob.bounds.sup_f * (1 + 1e-9) + 1e-12:
        msgs.append(f"|f(.,0,.)| reaches {sup_f0:.4g} > declared sup_f={prob.bounds.sup_f:.4g}")
    for msg in msgs:
        warnings.warn(f"problem {prob.name!r}: declared bound violated on samples: {msg}")


def _check_diagonal_dominance(prob: Problem, rng, n: int = 1000) -> None:
    """d=2 cross terms need h-scaled diagonal dominance of sigma sigma^T.

    Without it no fixed 7-point stencil is monotone, so such problems are
    rejected at load time.  Checked on samples with unit grid aspect.
    """
    t, x, iu, iv, _, _ = _sample_points(prob, rng, n)
    bnd = _bindings(prob, t, x, iu, iv)
    sig = np.empty((n, 2, 2))
    for i in range(2):
        for j in range(2):
            sig[:, i, j] = dsl.evaluate(prob.sigma[i][j], bnd)
    a = np.einsum("nij,nkj->nik", sig, sig)
    off = np.abs(a[:, 0, 1])
    bad = (a[:, 0, 0] < off - 1e-12) | (a[:, 1, 1] < off - 1e-12)
    if np.any(bad):
        raise ProblemError(
            "sigma sigma^T is not diagonally dominant on samples; no monotone "
            "7-point stencil exists for this d=2 problem"
        )


# ---------------------------------------------------------------------------
# Frozen coefficient evaluation
# ---------------------------------------------------------------------------


def freeze(prob: Problem, t: float, x, u_idx: int, v_idx: int) -> FrozenCoefficients:
    """Evaluate b, sigma and sigma sigma^T at one (t, x, u, v) point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != prob.d:
        raise ProblemError(f"state has dimension {x.size}, expected {prob.d}")
    if not (0 <= u_idx < prob.u_grid.n and 0 <= v_idx < prob.v_grid.n):
        raise ProblemError(f"control indices ({u_idx}, {v_idx}) out of range")
    bnd = prob.state_bindings(t, x)
    bnd.update(prob.control_bindings(u_idx, v_idx))
    try:
        b = np.array([dsl.evaluate(e, bnd) for e in prob.b], dtype=float)
        sig = np.array(
            [[dsl.evaluate(e, bnd) for e in row] for row in prob.sigma], dtype=float
        )
    except dsl.EvaluationError as exc:
        raise ProblemError(
            f"coefficient evaluation failed at t={t}, x={x.tolist()}, "
            f"u_idx={u_idx}, v_idx={v_idx}: {exc}"
        ) from exc
    return FrozenCoefficients(b=b, sigma=sig, sigma_sigma_t=sig @ sig.T)


# ---------------------------------------------------------------------------
# Benchmark catalog
# ---------------------------------------------------------------------------

_PM_ONE = {"points": [[-1.0], [1.0]]}

CATALOG = {
    # bilinear running cost u*v: the classic game with no pure-strategy
    # value; mixed value is identically 0, pure envelopes are -(T-t), +(T-t)
    "uv_running_cost": {
        "name": "uv_running_cost",
        "d": 1,
        "T": 1.0,
        "b": ["0"],
        "sigma": [["1"]],
        "f": "u1*v1",
        "phi": "0",
        "U": _PM_ONE,
        "V": _PM_ONE,
        "domain": {"min": [-6.0], "max": [6.0], "boundary": "clamp"},
        "condition41_mode": "sigma_uncontrolled",
        "bounds": {
            "sup_b": 0.0,
            "sup_sigma": 1.0,
            "lip_y_f": 0.0,
            "sup_f": 1.0,
            "lip_phi": 0.0,
            "sup_phi": 0.0,
            "value_lip": 0.0,
        },
    },
    # control-free heat equation with cosine terminal data; the value is
    # exp(-(T-t)/2) cos(x), an analytic benchmark for the scheme
    "heat_cosine": {
        "name": "heat_cosine",
        "d": 1,
        "T": 1.0,
        "b": ["0"],
        "sigma": [["1"]],
        "f": "0",
        "phi": "cos(x1)",
        "U": {"points": [[0.0]]},
        "V": {"points": [[0.0]]},
        "domain": {"min": [-6.0], "max": [6.0], "boundary": "clamp"},
        "condition41_mode": "sigma_uncontrolled",
        "bounds": {
            "sup_b": 0.0,
            "sup_sigma": 1.0,
            "lip_y_f": 0.0,
            "sup_f": 0.0,
            "lip_phi": 1.0,
            "sup_phi": 1.0,
            "value_lip": 1.0,
        },
    },
    # bilinear drift u*v with linear terminal cost: mixed value is x for
    # all t, pure envelopes are x -+ (T-t).  phi is unbounded on R but
    # bounded on the truncated box; sup_phi declares the box supremum.
    "uv_drift": {
        "name": "uv_drift",
        "d": 1,
        "T": 1.0,
        "b": ["u1*v1"],
        "sigma": [["1"]],
        "f": "0",
        "phi": "x1",
        "U": _PM_ONE,
        "V": _PM_ONE,
        "domain": {"min": [-7.0], "max": [7.0], "boundary": "clamp"},
        "condition41_mode": "sigma_uncontrolled",
        "bounds": {
            "sup_b": 1.0,
            "sup_sigma": 1.0,
            "lip_y_f": 0.0,
            "sup_f": 0.0,
            "lip_phi": 1.0,
            "sup_phi": 7.0,
            "value_lip": 1.0,
        },
    },
}


def catalog_names() -> list[str]:
    return sorted(CATALOG)
