import copy
import math

import numpy as np
import pytest

from mixedvalue.partition import (
    LocalGameSpec,
    MeshTooCoarseError,
    Partition,
    convergence_study,
    dpp_sweep,
    local_ode_step,
)
from mixedvalue.pde import SchemeParams, SpaceGrid, cfl_limit, solve
from mixedvalue.problem import CATALOG, load_problem


def variant(base, **over):
    cfg = copy.deepcopy(CATALOG[base])
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    return load_problem(cfg)


@pytest.fixture(scope="module")
def uv_cost():
    return load_problem("uv_running_cost")


@pytest.fixture(scope="module")
def heat():
    return load_problem("heat_cosine")


@pytest.fixture(scope="module")
def uv_ydep():
    return variant("uv_running_cost", name="uv_ydep", f="u1*v1 - y",
                   bounds={"lip_y_f": 1.0, "sup_f": 1.0})


class TestPartition:
    def test_uniform(self):
        pi = Partition.uniform(1.0, 4)
        assert pi.n == 4
        assert pi.mesh == pytest.approx(0.25)
        assert pi.times[0] == 0.0 and pi.times[-1] == 1.0

    def test_rejects_nonmonotone(self):
        with pytest.raises(ValueError):
            Partition(np.array([0.0, 0.5, 0.5, 1.0]))

    def test_rejects_bad_start(self):
        with pytest.raises(ValueError):
            Partition(np.array([0.1, 1.0]))

    def test_custom_times(self):
        pi = Partition(np.array([0.0, 0.1, 0.5, 1.0]))
        assert pi.mesh == pytest.approx(0.5)


class TestLocalOdeStep:
    def test_constant_rhs_is_exact_for_any_substeps(self, uv_cost):
        # pure-lower game value is -1 regardless of y: result is -delta
        for substeps in (1, 3, 10):
            spec = LocalGameSpec(t_start=0.5, t_end=0.75, x=np.zeros(1),
                                 p=np.zeros(1), A=np.zeros((1, 1)),
                                 field_value=0.0, substeps=substeps)
            y = local_ode_step(spec, uv_cost, SchemeParams(hamiltonian_mode="pure_lower"))
            assert y == pytest.approx(-0.25, abs=1e-15)

    def test_relaxed_value_zero(self, uv_cost):
        spec = LocalGameSpec(t_start=0.0, t_end=0.25, x=np.zeros(1),
                             p=np.zeros(1), A=np.zeros((1, 1)), field_value=0.0)
        assert local_ode_step(spec, uv_cost, SchemeParams()) == pytest.approx(0.0, abs=1e-12)

    def test_zero_solution_preserved_under_y_feedback(self):
        # f(y) = -y with no game part: dY/ds = Y with Y(t_end)=0 stays 0
        prob = variant("uv_running_cost", name="pure_y", f="0-y",
                       bounds={"lip_y_f": 1.0, "sup_f": 0.0})
        spec = LocalGameSpec(t_start=0.0, t_end=0.5, x=np.zeros(1),
                             p=np.zeros(1), A=np.zeros((1, 1)),
                             field_value=0.0, substeps=8)
        assert local_ode_step(spec, prob, SchemeParams()) == 0.0

    def test_substep_halving_first_order(self, uv_ydep):
        # Euler refinement changes the result by O(delta^2 / substeps)
        delta = 0.5
        results = {}
        for substeps in (1, 2, 4, 8, 16):
            spec = LocalGameSpec(t_start=0.25, t_end=0.25 + delta, x=np.zeros(1),
                                 p=np.zeros(1), A=np.zeros((1, 1)),
                                 field_value=0.3, substeps=substeps)
            results[substeps] = local_ode_step(spec, uv_ydep, SchemeParams())
        c = 2.0  # generous constant for f with Lip_y = 1 and |f| <= 2
        for substeps in (1, 2, 4, 8):
            change = abs(results[2 * substeps] - results[substeps])
            assert change <= c * delta**2 / substeps

    def test_validates_inputs(self):
        with pytest.raises(ValueError):
            LocalGameSpec(t_start=0.5, t_end=0.5, x=np.zeros(1), p=np.zeros(1),
                          A=np.zeros((1, 1)), field_value=0.0)
        with pytest.raises(ValueError):
            LocalGameSpec(t_start=0.0, t_end=0.5, x=np.zeros(1), p=np.zeros(1),
                          A=np.zeros((1, 1)), field_value=0.0, substeps=0)


class TestDppSweep:
    def test_uv_running_cost_values_coincide_near_zero(self, uv_cost):
        grid = SpaceGrid.for_problem(uv_cost, 101)
        pi = Partition.uniform(1.0, 4)
        res_w = dpp_sweep(uv_cost, grid, pi, SchemeParams(), "lower")
        res_u = dpp_sweep(uv_cost, grid, pi, SchemeParams(), "upper")
        assert np.max(np.abs(res_w.field_at_0.values)) <= 1e-9
        assert np.max(np.abs(res_u.field_at_0.values)) <= 1e-9
        gap = max(np.max(np.abs(a.values - b.values))
                  for a, b in zip(res_w.levels, res_u.levels))
        assert gap <= 1e-9

    def test_labels(self, uv_cost):
        grid = SpaceGrid.for_problem(uv_cost, 51)
        pi = Partition.uniform(1.0, 2)
        assert dpp_sweep(uv_cost, grid, pi, SchemeParams(), "lower").field_at_0.label == "W_pi"
        assert dpp_sweep(uv_cost, grid, pi, SchemeParams(), "upper").field_at_0.label == "U_pi"

    def test_control_free_sweep_equals_pde_solve_bitwise(self, heat):
        grid = SpaceGrid.for_problem(heat, 101)
        limit = 0.9 * cfl_limit(heat, grid)
        n = 8
        n_fine = n * max(1, math.ceil(1.0 / (n * limit) - 1e-12))
        levels = solve(heat, grid, SchemeParams(dt=1.0 / n_fine))
        res = dpp_sweep(heat, grid, Partition.uniform(1.0, n), SchemeParams(),
                        "lower", substeps=n_fine // n)
        assert np.array_equal(res.field_at_0.values, levels[-1].values)

    def test_pure_sweeps_reach_isaacs_envelopes(self, uv_cost):
        grid = SpaceGrid.for_problem(uv_cost, 101)
        pi = Partition.uniform(1.0, 4)
        low = dpp_sweep(uv_cost, grid, pi, SchemeParams(), "lower", pure=True)
        up = dpp_sweep(uv_cost, grid, pi, SchemeParams(), "upper", pure=True)
        assert np.allclose(low.field_at_0.values, -1.0, atol=1e-12)
        assert np.allclose(up.field_at_0.values, 1.0, atol=1e-12)

    def test_boundedness(self, uv_ydep):
        # discrete Gronwall bound: |W| <= sup|phi| + T sup|f0| e^{Lip_y T}
        grid = SpaceGrid.for_problem(uv_ydep, 51)
        pi = Partition.uniform(1.0, 8)
        res = dpp_sweep(uv_ydep, grid, pi, SchemeParams(), "lower")
        bound = 0.0 + 1.0 * 1.0 * math.exp(1.0)
        for fld in res.levels:
            assert np.max(np.abs(fld.values)) <= bound * 1.1

    def test_mesh_too_coarse(self, heat):
        grid = SpaceGrid.for_problem(heat, 201)
        pi = Partition.uniform(1.0, 2)
        with pytest.raises(MeshTooCoarseError):
            dpp_sweep(heat, grid, pi, SchemeParams(), "lower", substeps=1)

    def test_horizon_mismatch(self, heat):
        grid = SpaceGrid.for_problem(heat, 51)
        with pytest.raises(ValueError, match="horizon"):
            dpp_sweep(heat, grid, Partition.uniform(0.5, 2), SchemeParams(), "lower")

    def test_recorded_strategies_are_saddles(self, uv_cost):
        grid = SpaceGrid.for_problem(uv_cost, 51)
        pi = Partition.uniform(1.0, 4)
        res = dpp_sweep(uv_cost, grid, pi, SchemeParams(), "lower",
                        record_strategies=True)
        assert res.mu.shape == (4, 49, 2)
        assert np.allclose(res.mu, 0.5, atol=1e-9)
        assert np.allclose(res.nu, 0.5, atol=1e-9)

    def test_y_dependent_sweep_runs(self, uv_ydep):
        grid = SpaceGrid.for_problem(uv_ydep, 51)
        pi = Partition.uniform(1.0, 4)
        res = dpp_sweep(uv_ydep, grid, pi, SchemeParams(), "lower")
        # f = u v - y with saddle value 0 - y feeds back linearly; the flat
        # field solves dW/dt = -W backward from 0, staying identically 0
        assert np.max(np.abs(res.field_at_0.values)) <= 1e-9


class TestConvergenceStudy:
    def test_uv_running_cost_gaps_vanish(self, uv_cost):
        grid = SpaceGrid.for_problem(uv_cost, 41)
        rows = convergence_study(uv_cost, grid, [2, 4, 8, 16], SchemeParams())
        gaps = [r["sup_w_minus_v"] for r in rows]
        assert all(g <= 1e-12 for g in gaps)
        assert all(g[1] <= g[0] + 1e-12 for g in zip(gaps, gaps[1:]) for g in [g])
        assert all(r["sup_w_minus_u"] <= 1e-9 for r in rows)

    def test_heat_gap_tracks_partition(self, heat):
        # with one substep per subinterval the sweep's time step is the
        # partition mesh; the gap against the fine solve decays with it
        grid = SpaceGrid.for_problem(heat, 17)
        params = SchemeParams(cfl_safety=1.0)
        rows = convergence_study(heat, grid, [2, 4, 8, 16], params)
        gaps = [r["sup_w_minus_v"] for r in rows]
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= gaps[0] / 4
        assert all(r["substeps"] == 1 for r in rows)

    def test_refinement_slope(self):
        prob = load_problem("uv_drift")
        grid = SpaceGrid.for_problem(prob, 11)
        rows = convergence_study(prob, grid, [4, 8, 16, 32, 64],
                                 SchemeParams(cfl_safety=1.0))
        mesh = np.array([r["mesh"] for r in rows])
        full = np.array([r["sup_w_minus_v_full"] for r in rows])
        slope = np.polyfit(np.log(mesh), np.log(full), 1)[0]
        assert slope >= 0.45

    def test_time_modulus_and_lipschitz_columns(self, heat):
        grid = SpaceGrid.for_problem(heat, 17)
        rows = convergence_study(heat, grid, [4, 8], SchemeParams(cfl_safety=1.0))
        for r in rows:
            assert r["time_modulus"] <= r["time_modulus_bound"]
            assert r["space_lipschitz"] <= 1.0 + 0.1
