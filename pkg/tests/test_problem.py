import copy
import json

import numpy as np
import pytest

from mixedvalue.problem import (
    CATALOG,
    ConditionViolationError,
    ControlGrid,
    Domain,
    ProblemError,
    catalog_names,
    freeze,
    interior_margin,
    interior_window,
    load_problem,
    time_modulus_bound,
    value_bound,
)


def cfg_variant(base_name, **overrides):
    cfg = copy.deepcopy(CATALOG[base_name])
    for key, val in overrides.items():
        if isinstance(val, dict) and key in cfg and isinstance(cfg[key], dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


class TestCatalog:
    def test_names(self):
        assert catalog_names() == ["heat_cosine", "uv_drift", "uv_running_cost"]

    @pytest.mark.parametrize("name", ["uv_running_cost", "heat_cosine", "uv_drift"])
    def test_every_catalog_problem_loads(self, name):
        prob = load_problem(name)
        assert prob.name == name
        assert prob.T == 1.0
        assert prob.d == 1

    def test_uv_running_cost_shape(self):
        prob = load_problem("uv_running_cost")
        assert prob.u_grid.points.tolist() == [[-1.0], [1.0]]
        assert prob.v_grid.points.tolist() == [[-1.0], [1.0]]
        assert prob.f_src == "u1*v1"
        assert prob.phi_src == "0"

    def test_heat_cosine_is_control_free(self):
        prob = load_problem("heat_cosine")
        assert prob.u_grid.n == 1 and prob.v_grid.n == 1

    def test_uv_drift_shape(self):
        prob = load_problem("uv_drift")
        assert prob.b_src == ("u1*v1",)
        assert prob.phi_src == "x1"


class TestLoading:
    def test_from_json_text(self):
        prob = load_problem(json.dumps(CATALOG["heat_cosine"]))
        assert prob.name == "heat_cosine"

    def test_from_file(self, tmp_path):
        path = tmp_path / "prob.json"
        path.write_text(json.dumps(CATALOG["uv_drift"]))
        assert load_problem(str(path)).name == "uv_drift"

    def test_horizon_alias(self):
        cfg = cfg_variant("heat_cosine")
        cfg["horizon"] = cfg.pop("T")
        assert load_problem(cfg).T == 1.0

    def test_missing_key(self):
        cfg = cfg_variant("heat_cosine")
        del cfg["phi"]
        with pytest.raises(ProblemError, match="phi"):
            load_problem(cfg)

    def test_dsl_parse_error_surfaces(self):
        with pytest.raises(ProblemError, match="b\\[0\\]"):
            load_problem(cfg_variant("heat_cosine", b=["1 +"]))

    def test_unknown_source(self):
        with pytest.raises(ProblemError):
            load_problem("no_such_problem_anywhere")

    def test_phi_may_only_reference_state(self):
        with pytest.raises(ProblemError):
            load_problem(cfg_variant("heat_cosine", phi="cos(x1)+u1"))

    def test_bad_dimension(self):
        with pytest.raises(ProblemError):
            load_problem(cfg_variant("heat_cosine", d=3))


class TestCondition41:
    def test_sigma_uncontrolled_violation_names_coefficient(self):
        cfg = cfg_variant("uv_running_cost", sigma=[["1+0*u1"]])
        with pytest.raises(ConditionViolationError, match="sigma\\[0\\]\\[0\\]"):
            load_problem(cfg)

    def test_f_linear_in_z_accepts_linear(self):
        cfg = cfg_variant(
            "uv_running_cost",
            condition41_mode="f_linear_in_z",
            f="u1*v1 + 2*z1",
            bounds={"lip_y_f": 0.0},
        )
        prob = load_problem(cfg)
        assert prob.condition41_mode == "f_linear_in_z"

    def test_f_linear_in_z_rejects_quadratic(self):
        cfg = cfg_variant("uv_running_cost", condition41_mode="f_linear_in_z",
                          f="u1*v1 + z1*z1")
        with pytest.raises(ConditionViolationError, match="linear in z"):
            load_problem(cfg)

    def test_f_linear_in_z_rejects_control_dependent_slope(self):
        cfg = cfg_variant("uv_running_cost", condition41_mode="f_linear_in_z",
                          f="u1*v1 + u1*z1")
        with pytest.raises(ConditionViolationError, match="z coefficient"):
            load_problem(cfg)


class TestValidationChecks:
    def test_bounds_cross_check_warns(self):
        cfg = cfg_variant("uv_drift", bounds={"sup_b": 0.1})
        with pytest.warns(UserWarning, match="sup_b"):
            load_problem(cfg)

    def test_bounds_missing_key(self):
        cfg = cfg_variant("heat_cosine")
        del cfg["bounds"]["sup_sigma"]
        with pytest.raises(ProblemError, match="sup_sigma"):
            load_problem(cfg)

    def test_d2_diagonal_dominance_rejected(self):
        cfg = {
            "name": "bad2d",
            "d": 2,
            "T": 1.0,
            "b": ["0", "0"],
            # sigma sigma^T = [[1, 1], [1, 1]]: off-diagonal equals diagonal
            # but rotated so dominance fails: use [[1, 0.99], [0, 0.1]] rows
            "sigma": [["1", "0.99"], ["0", "0.1"]],
            "f": "0",
            "phi": "0",
            "U": {"points": [[0.0]]},
            "V": {"points": [[0.0]]},
            "domain": {"min": [-1.0, -1.0], "max": [1.0, 1.0]},
            "condition41_mode": "sigma_uncontrolled",
            "bounds": {
                "sup_b": 0.0, "sup_sigma": 1.5, "lip_y_f": 0.0, "sup_f": 0.0,
                "lip_phi": 0.0, "sup_phi": 0.0, "value_lip": 0.0,
            },
        }
        with pytest.raises(ProblemError, match="dominant"):
            load_problem(cfg)

    def test_d2_diagonal_problem_loads(self):
        cfg = {
            "name": "heat2d",
            "d": 2,
            "T": 0.5,
            "b": ["0", "0"],
            "sigma": [["1", "0"], ["0", "1"]],
            "f": "0",
            "phi": "cos(x1)*cos(x2)",
            "U": {"points": [[0.0]]},
            "V": {"points": [[0.0]]},
            "domain": {"min": [-4.0, -4.0], "max": [4.0, 4.0]},
            "condition41_mode": "sigma_uncontrolled",
            "bounds": {
                "sup_b": 0.0, "sup_sigma": 1.0, "lip_y_f": 0.0, "sup_f": 0.0,
                "lip_phi": 1.5, "sup_phi": 1.0, "value_lip": 1.5,
            },
        }
        prob = load_problem(cfg)
        assert prob.d == 2


class TestFreeze:
    def test_uv_running_cost_constant_coefficients(self):
        prob = load_problem("uv_running_cost")
        fr = freeze(prob, 0.3, [0.7], 0, 1)
        assert fr.b.tolist() == [0.0]
        assert fr.sigma.tolist() == [[1.0]]
        assert fr.sigma_sigma_t.tolist() == [[1.0]]

    def test_uv_drift_sign(self):
        prob = load_problem("uv_drift")
        # u=+1 (index 1), v=-1 (index 0): b = -1
        fr = freeze(prob, 0.0, [0.0], 1, 0)
        assert fr.b.tolist() == [-1.0]

    def test_matches_direct_evaluation(self):
        from mixedvalue import dsl

        prob = load_problem("uv_drift")
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.uniform(0, 1)
            x = rng.uniform(-7, 7, 1)
            iu, iv = rng.integers(0, 2, 2)
            fr = freeze(prob, t, x, iu, iv)
            bnd = prob.state_bindings(t, x)
            bnd.update(prob.control_bindings(iu, iv))
            assert fr.b[0] == dsl.evaluate(prob.b[0], bnd)
            assert fr.sigma[0, 0] == dsl.evaluate(prob.sigma[0][0], bnd)

    def test_sigma_uncontrolled_freeze_is_control_independent(self):
        prob = load_problem("uv_running_cost")
        base = freeze(prob, 0.5, [1.0], 0, 0)
        for iu in range(2):
            for iv in range(2):
                fr = freeze(prob, 0.5, [1.0], iu, iv)
                assert np.array_equal(fr.sigma, base.sigma)
                assert np.array_equal(fr.sigma_sigma_t, base.sigma_sigma_t)

    def test_sigma_sigma_t_symmetric_psd(self):
        cfg = {
            "name": "skew2d",
            "d": 2,
            "T": 1.0,
            "b": ["0", "0"],
            "sigma": [["1", "0.3"], ["0.1", "0.8"]],
            "f": "0",
            "phi": "0",
            "U": {"points": [[0.0]]},
            "V": {"points": [[0.0]]},
            "domain": {"min": [-1.0, -1.0], "max": [1.0, 1.0]},
            "condition41_mode": "sigma_uncontrolled",
            "bounds": {
                "sup_b": 0.0, "sup_sigma": 1.1, "lip_y_f": 0.0, "sup_f": 0.0,
                "lip_phi": 0.0, "sup_phi": 0.0, "value_lip": 0.0,
            },
        }
        fr = freeze(load_problem(cfg), 0.0, [0.0, 0.0], 0, 0)
        a = fr.sigma_sigma_t
        assert np.array_equal(a, a.T)
        assert np.all(np.linalg.eigvalsh(a) >= -1e-12)

    def test_bad_indices(self):
        prob = load_problem("uv_running_cost")
        with pytest.raises(ProblemError):
            freeze(prob, 0.0, [0.0], 2, 0)


class TestDerivedQuantities:
    def test_interior_margin(self):
        prob = load_problem("uv_drift")
        assert interior_margin(prob) == pytest.approx(1.0 + 4.0)

    def test_interior_window(self):
        prob = load_problem("uv_drift")
        lo, hi = interior_window(prob)
        assert lo.tolist() == [-2.0]
        assert hi.tolist() == [2.0]

    def test_window_nonempty_required(self):
        cfg = cfg_variant("uv_drift", domain={"min": [-3.0], "max": [3.0]})
        prob = load_problem(cfg)
        with pytest.raises(ProblemError, match="window"):
            interior_window(prob)

    def test_value_bound(self):
        assert value_bound(load_problem("uv_running_cost")) == pytest.approx(1.0)
        assert value_bound(load_problem("heat_cosine")) == pytest.approx(1.0)

    def test_time_modulus_bound(self):
        assert time_modulus_bound(load_problem("heat_cosine")) == pytest.approx(4.0)


class TestTypes:
    def test_control_grid_duplicates(self):
        with pytest.raises(ProblemError):
            ControlGrid(np.array([[1.0], [1.0]]), "U")

    def test_control_grid_label(self):
        with pytest.raises(ProblemError):
            ControlGrid(np.array([[1.0]]), "W")

    def test_domain_ordering(self):
        with pytest.raises(ProblemError):
            Domain(np.array([1.0]), np.array([-1.0]))

    def test_domain_boundary_mode(self):
        with pytest.raises(ProblemError):
            Domain(np.array([-1.0]), np.array([1.0]), "reflect")
