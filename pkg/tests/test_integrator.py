import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from povtrap import ConfigurationError, SolverSettings, builtin_scenario, flow_endpoint, flow_endpoints, integrate
from povtrap.integrator import CONVERGED, FAILURE, MAX_TIME

from conftest import attractors, model

FIG2 = builtin_scenario("fig2")
box10 = st.floats(min_value=0.0, max_value=10.0, allow_nan=False)


class TestSettings:
    def test_defaults(self):
        s = SolverSettings()
        assert (s.rtol, s.atol, s.t_max, s.eps_conv) == (1e-8, 1e-10, 1000.0, 1e-9)

    @pytest.mark.parametrize("field", ["rtol", "atol", "t_max", "eps_conv", "max_steps", "max_step"])
    def test_nonpositive_rejected(self, field):
        with pytest.raises(ConfigurationError, match=field):
            SolverSettings(**{field: 0})

    def test_halved(self):
        h = SolverSettings().halved()
        assert (h.rtol, h.atol) == (5e-9, 5e-11)


class TestIntegrate:
    def test_fig2_from_origin(self):
        traj = integrate(FIG2, [0.0, 0.0, 0.0])
        assert traj.status == CONVERGED
        np.testing.assert_allclose(traj.final_state, [0.0, 0.0, 3.0], atol=1e-8)

    def test_fig2_from_rich_state(self):
        traj = integrate(FIG2, [5.0, 5.0, 5.0])
        assert traj.status == CONVERGED
        np.testing.assert_allclose(traj.final_state, [0.0, 0.0, 3.0], atol=1e-8)

    def test_trajectory_invariants(self):
        traj = integrate(FIG2, [5.0, 5.0, 5.0])
        assert traj.times[0] == 0.0
        np.testing.assert_array_equal(traj.states[0], [5.0, 5.0, 5.0])
        assert np.all(np.diff(traj.times) > 0)
        assert np.all(traj.states >= 0)
        assert np.max(np.abs(FIG2.rhs(traj.final_state))) <= 1e-9
        assert traj.model_id == "baseline"
        assert traj.active == ("k_a", "k_p", "k_w")

    def test_two_attractor_tillage_model(self):
        m = model("fig4_folded")
        low, high = attractors("fig4_folded").states
        a = integrate(m, [0.01, 5.0])
        b = integrate(m, [10.0, 5.0])
        assert a.status == b.status == CONVERGED
        np.testing.assert_allclose(a.final_state, low, atol=1e-6)
        np.testing.assert_allclose(b.final_state, high, atol=1e-6)

    def test_builtin_tillage_model_has_one_destination(self):
        # with A = 6 the reduced asset equation has no positive root
        m = builtin_scenario("fig4")
        for x0 in ([0.01, 5.0], [10.0, 5.0]):
            traj = integrate(m, x0)
            assert traj.status == CONVERGED
            np.testing.assert_allclose(traj.final_state, [0.0, 5.0], atol=1e-6)

    def test_max_time_reported(self):
        traj = integrate(FIG2, [5.0, 5.0, 5.0], SolverSettings(t_max=1.0))
        assert traj.status == MAX_TIME
        assert traj.times[-1] == pytest.approx(1.0)

    def test_step_budget_exhaustion_is_failure(self):
        traj = integrate(FIG2, [5.0, 5.0, 5.0], SolverSettings(max_steps=3))
        assert traj.status == FAILURE
        assert "step" in traj.message

    def test_runs_past_convergence_when_asked(self):
        traj = integrate(FIG2, [1.0, 1.0, 1.0], SolverSettings(t_max=60.0), stop_on_convergence=False)
        assert traj.status == MAX_TIME
        assert traj.times[-1] == pytest.approx(60.0)

    def test_start_time_offset(self):
        traj = integrate(FIG2, [1.0, 1.0, 1.0], SolverSettings(t_max=5.0), t0=10.0)
        assert traj.times[0] == 10.0
        assert traj.times[-1] == pytest.approx(15.0)

    def test_linear_interpolation(self):
        traj = integrate(FIG2, [1.0, 1.0, 1.0])
        t = 0.5 * (traj.times[3] + traj.times[4])
        np.testing.assert_allclose(traj.at(t), 0.5 * (traj.states[3] + traj.states[4]))
        with pytest.raises(ValueError):
            traj.at(traj.times[-1] + 1)

    def test_nonnegativity_kept_near_zero(self):
        # k_p decays towards zero for hundreds of time units
        traj = integrate(FIG2, [0.0, 10.0, 3.0], stop_on_convergence=False, settings=SolverSettings(t_max=200))
        assert np.all(traj.states >= 0.0)


class TestClosedForms:
    """Water and phosphorus decouple in the baseline model."""

    @hsettings(max_examples=15, deadline=None)
    @given(x0=st.tuples(box10, box10, box10))
    def test_water_and_phosphorus(self, x0):
        s = SolverSettings(t_max=50.0)
        traj = integrate(FIG2, x0, s, stop_on_convergence=False)
        t = traj.times
        kw = 3.0 + (x0[2] - 3.0) * np.exp(-0.5 * t)
        kp = x0[1] * np.exp(-1.0 * t)
        tol = 10 * (s.atol + s.rtol * np.abs(kw))
        assert np.all(np.abs(traj.states[:, 2] - kw) <= tol)
        assert np.all(np.abs(traj.states[:, 1] - kp) <= 10 * (s.atol + s.rtol * np.abs(kp)))


class TestFlowEndpoint:
    @hsettings(max_examples=25, deadline=None)
    @given(x0=st.tuples(box10, box10, box10))
    def test_fig2_whole_box_reaches_attractor(self, x0):
        end, status = flow_endpoint(FIG2, x0)
        assert status == CONVERGED
        assert np.max(np.abs(end - [0.0, 0.0, 3.0])) < 1e-6

    @pytest.mark.parametrize("name", ["fig2", "fig3b", "fig3c", "fig3e", "fig3f", "fig4", "fig4_folded"])
    def test_equilibrium_start_converges_immediately(self, name):
        m = model(name)
        for a in attractors(name):
            traj = integrate(m, a.state)
            assert traj.status == CONVERGED
            assert traj.steps == 0
            np.testing.assert_array_equal(traj.final_state, a.state)

    def test_fig3c_rich_start_ends_poor(self):
        end, status = flow_endpoint(model("fig3c"), [8.0, 8.0, 8.0])
        assert status == CONVERGED
        np.testing.assert_allclose(end, attractors("fig3c")[0].state, atol=1e-6)
        assert end[0] == pytest.approx(0.0, abs=1e-6)

    def test_matches_integrate(self):
        x0 = [2.5, 1.0, 7.0]
        end, status = flow_endpoint(model("fig3b"), x0)
        traj = integrate(model("fig3b"), x0)
        np.testing.assert_array_equal(end, traj.final_state)
        assert status == traj.status

    def test_batch_rows_are_independent(self, rng):
        m = model("fig3b")
        X = rng.uniform(0, 10, size=(12, 3))
        whole = flow_endpoints(m, X)
        for i in (0, 5, 11):
            end, status = flow_endpoint(m, X[i])
            np.testing.assert_allclose(whole.states[i], end, rtol=0, atol=1e-12)
            assert whole.status[i] == status

    def test_rejects_negative_start(self):
        with pytest.raises(ValueError):
            flow_endpoints(FIG2, [[1.0, -1.0, 1.0]])

    @pytest.mark.parametrize("name", ["fig2", "fig3b", "fig3c", "fig3e", "fig4_folded"])
    def test_self_convergence_under_tolerance_halving(self, name, rng):
        m = model(name)
        coarse = SolverSettings()
        fine = coarse.halved()
        X = rng.uniform(0, 10, size=(10, m.dimension))
        a = flow_endpoints(m, X, coarse)
        b = flow_endpoints(m, X, fine)
        assert np.all(a.status == CONVERGED) and np.all(b.status == CONVERGED)
        bound = 10 * coarse.rtol * np.maximum(1.0, np.abs(a.states))
        assert np.all(np.abs(a.states - b.states) < bound)
