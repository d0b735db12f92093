import mpmath
import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from povtrap import DomainError, SolverSettings, builtin_scenario, classify, find_equilibria, flow_endpoint, jacobian
from povtrap.equilibria import (
    BOUNDARY_ATTRACTING,
    SADDLE,
    STABLE,
    AttractorSet,
    Equilibrium,
    newton_batch,
    seed_grid,
)
from povtrap.integrator import CONVERGED

from conftest import FOLDED_A, attractors, model

mpmath.mp.dps = 30


# -- independent reduced-equation oracles ---------------------------------------
# At an equilibrium with k_a > 0 the resource rows are solvable for the resource
# stocks given k_a; substituting them leaves one scalar equation in k_a.

def _mp_sigmoid(k, s1, s2, s3):
    return s1 / (1 + mpmath.exp(-s2 * k + s3))


def fig3b_reduced(k):
    k = mpmath.mpf(k)
    k_p = (k**2 / (20 + k**2)) / mpmath.mpf("0.2")
    k_q = 10 * (1 - k / (4 + k))
    f = 10 * k ** mpmath.mpf("0.4") * k_p ** mpmath.mpf("0.3") * k_q ** mpmath.mpf("0.2")
    return _mp_sigmoid(k, mpmath.mpf("0.25"), mpmath.mpf("2.5"), 20) * f - mpmath.mpf("0.7") * k


def fig3e_reduced(k, c1=1.0):
    # k_p = 0 branch gives f = 0; the productive branch has c3 k_p/(c4+k_p) = delta_p / I_p(k_a)
    g = c1 * k**2 / (5 + k**2)
    k_p = g / 0.2 - 1.8
    k_w = 1 / (1 - k**2 / (40 + k**2))
    if k_p <= 0:
        return None
    return 0.1 * (1 / (1 + np.exp(-k))) * 10 * k**0.3 * k_p**0.3 * k_w**0.2 - 0.5 * k, k_p, k_w


def tillage_reduced(k, A):
    return 0.1 / (1 + np.exp(-10 * k + 20)) * A * 5**0.4 * k**0.4 - k


def bisect(fn, lo, hi, tol=mpmath.mpf("1e-20")):
    flo = fn(lo)
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if (fn(mid) > 0) == (flo > 0):
            lo, flo = mid, fn(mid)
        else:
            hi = mid
    return (lo + hi) / 2


def sign_change_roots(fn, grid):
    vals = np.array([fn(k) for k in grid])
    idx = np.flatnonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))
    return [(grid[i], grid[i + 1]) for i in idx]


class TestReducedOracles:
    def test_fig3b_roots(self):
        grid = np.linspace(0.5, 40, 400)
        brackets = sign_change_roots(lambda k: float(fig3b_reduced(k)), grid)
        roots = [float(bisect(fig3b_reduced, mpmath.mpf(a), mpmath.mpf(b))) for a, b in brackets]
        assert len(roots) == 2
        assert roots[0] == pytest.approx(8.0222, abs=1e-4)
        assert roots[1] == pytest.approx(21.2783, abs=1e-3)

    def test_builtin_tillage_has_no_positive_root(self):
        # max over k of s(k) A 5^0.4 k^-0.6 stays below the depreciation rate 1
        ratio = lambda k: 0.1 / (1 + mpmath.exp(-10 * k + 20)) * 6 * mpmath.mpf(5) ** 0.4 * k ** -0.6
        kmax = mpmath.findroot(lambda k: mpmath.diff(ratio, k), 2.2)
        assert float(ratio(kmax)) == pytest.approx(0.66420, abs=1e-5)
        grid = np.linspace(0.05, 30, 30000)
        assert sign_change_roots(lambda k: tillage_reduced(k, 6.0), grid) == []

    def test_folded_tillage_has_two_positive_roots(self):
        grid = np.linspace(0.05, 30, 30000)
        assert len(sign_change_roots(lambda k: tillage_reduced(k, FOLDED_A), grid)) == 2


class TestFindEquilibria:
    def test_fig2_single_attractor(self):
        eqs = find_equilibria(model("fig2"))
        att = [e for e in eqs if e.is_attractor]
        assert len(att) == 1
        np.testing.assert_allclose(att[0].state, [0.0, 0.0, 3.0], atol=1e-6)
        assert att[0].classification == BOUNDARY_ATTRACTING

    @pytest.mark.parametrize("name,count", [("fig2", 1), ("fig3b", 2), ("fig3c", 1), ("fig3e", 2),
                                            ("fig3f", 1), ("fig4", 1), ("fig4_folded", 2)])
    def test_attractor_counts(self, name, count):
        assert len(attractors(name)) == count

    def test_fig3b_attractors(self):
        a = attractors("fig3b")
        np.testing.assert_allclose(a[0].state, [0.0, 0.0, 10.0], atol=1e-9)
        hi = a[1].state
        assert hi[0] > 10 and hi[2] < 10

    def test_fig3b_interior_matches_reduced_oracle(self):
        hi = attractors("fig3b")[1].state
        k = bisect(fig3b_reduced, mpmath.mpf(20), mpmath.mpf(23))
        expected = [float(k), float((k**2 / (20 + k**2)) / mpmath.mpf("0.2")), float(10 * (1 - k / (4 + k)))]
        np.testing.assert_allclose(hi, expected, rtol=0, atol=1e-6)

    def test_fig3b_saddle_matches_reduced_oracle(self):
        eqs = find_equilibria(model("fig3b"))
        saddles = [e for e in eqs if e.classification == SADDLE and e.state[0] > 1]
        assert len(saddles) == 1
        k = bisect(fig3b_reduced, mpmath.mpf(7), mpmath.mpf(9))
        assert saddles[0].state[0] == pytest.approx(float(k), abs=1e-6)

    @pytest.mark.parametrize("name,n_interior", [("fig3e", 2), ("fig3f", 0)])
    def test_energy_interior_roots_match_oracle(self, name, n_interior):
        c1 = model(name).params.c1
        grid = np.linspace(0.05, 30, 6000)

        def g(k):
            r = fig3e_reduced(k, c1)
            return -1.0 if r is None else r[0]

        brackets = sign_change_roots(g, grid)
        found = sorted(e.state[0] for e in find_equilibria(model(name)) if e.state[0] > 1e-6)
        assert len(found) == len(brackets) == n_interior
        for (a, b), k in zip(brackets, found):
            assert a <= k <= b

    def test_fig3c_attractor_is_poor(self):
        (a,) = attractors("fig3c")
        assert a.state[0] == 0.0

    def test_fig4_folded_structure(self):
        eqs = find_equilibria(model("fig4_folded"))
        assert [e.classification for e in eqs] == [BOUNDARY_ATTRACTING, SADDLE, STABLE]
        for e in eqs:
            assert e.state[1] == pytest.approx(5.0, abs=1e-6)
        grid = np.linspace(0.05, 30, 30000)
        (s_lo, s_hi), (a_lo, a_hi) = sign_change_roots(lambda k: tillage_reduced(k, FOLDED_A), grid)
        assert s_lo <= eqs[1].state[0] <= s_hi
        assert a_lo <= eqs[2].state[0] <= a_hi

    def test_residual_bound(self, builtin_name):
        for e in find_equilibria(model(builtin_name)):
            assert e.residual <= 1e-10
            assert np.max(np.abs(model(builtin_name).rhs(e.state))) <= 1e-10

    def test_deduplication_idempotent(self, builtin_name):
        a = find_equilibria(model(builtin_name))
        b = find_equilibria(model(builtin_name))
        assert len(a) == len(b)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.state, y.state)
            assert x.classification == y.classification

    def test_no_two_roots_within_merge_radius(self, builtin_name):
        eqs = find_equilibria(model(builtin_name))
        for i, a in enumerate(eqs):
            for b in eqs[i + 1:]:
                assert np.max(np.abs(a.state - b.state)) > 1e-4

    def test_analytic_boundary_candidates_included(self):
        states = [tuple(e.state) for e in find_equilibria(model("fig3c"))]
        assert (0.0, 0.0, 10.0) in states and (0.0, 0.0, 0.0) in states

    def test_stable_under_tolerance_halving(self):
        m = model("fig3b")
        a = find_equilibria(m)
        b = find_equilibria(m, settings=SolverSettings().halved(), eps_eq=5e-11)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x.state, y.state, rtol=0, atol=1e-6)

    def test_report_counts_failures(self):
        report = {}
        find_equilibria(model("fig2"), report=report)
        assert report["newton_seeds"] >= 8**3
        assert 0 <= report["newton_failures"] <= report["newton_seeds"]

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            find_equilibria(model("fig2"), seeds_per_axis=1)
        with pytest.raises(ValueError):
            find_equilibria(model("fig2"), box=[(-1, 1), (0, 1), (0, 1)])
        with pytest.raises(ValueError):
            find_equilibria(model("fig2"), box=[(0, 1), (0, 1)])


class TestReachability:
    @pytest.mark.parametrize("name", ["fig2", "fig3b", "fig3c", "fig3e", "fig3f", "fig4", "fig4_folded"])
    def test_perturbed_attractor_returns(self, name, rng):
        m = model(name)
        for a in attractors(name):
            for _ in range(5):
                d = rng.normal(size=m.dimension)
                x0 = np.maximum(a.state + 1e-3 * d / np.linalg.norm(d), 0.0)
                end, status = flow_endpoint(m, x0)
                assert status == CONVERGED
                assert np.max(np.abs(end - a.state)) <= 1e-3


class TestJacobian:
    @hsettings(max_examples=30, deadline=None)
    @given(x=st.tuples(*[st.floats(0.01, 20.0)] * 3))
    def test_baseline_water_row(self, x):
        J = jacobian(model("fig2"), np.array(x))
        np.testing.assert_allclose(J[2], [0.0, 0.0, -0.5], atol=1e-8)

    @hsettings(max_examples=30, deadline=None)
    @given(k_a=st.floats(0.05, 20.0), k_p=st.floats(0.05, 20.0))
    def test_soil_quality_diagonal(self, k_a, k_p):
        m = model("fig3b")
        iq = k_a / (4 + k_a)
        k_q = 10 * (1 - iq)
        J = jacobian(m, np.array([k_a, k_p, k_q]))
        assert J[2, 2] == pytest.approx(1 - 2 * k_q / 10 - iq, abs=1e-6)

    @hsettings(max_examples=30, deadline=None)
    @given(x=st.tuples(*[st.floats(0.05, 20.0)] * 3))
    def test_baseline_spectrum_contains_loss_rates(self, x):
        eig = np.sort(np.linalg.eigvals(jacobian(model("fig2"), np.array(x))).real)
        for rate in (-1.0, -0.5):
            assert np.min(np.abs(eig - rate)) < 1e-6

    @pytest.mark.parametrize("name", ["fig2", "fig3b", "fig3e", "fig4_folded"])
    @hsettings(max_examples=20, deadline=None)
    @given(data=st.data())
    def test_central_agrees_with_forward(self, name, data):
        m = model(name)
        x = np.array(data.draw(st.lists(st.floats(0.1, 15.0), min_size=m.dimension, max_size=m.dimension)))
        c = jacobian(m, x, "central")
        f = jacobian(m, x, "forward")
        # forward differences carry an O(h) truncation error, h ~ 1e-6 |x|
        scale = 1.0 + np.max(np.abs(c))
        assert np.max(np.abs(c - f)) <= 1e-4 * scale

    def test_boundary_state_is_domain_error(self):
        with pytest.raises(DomainError):
            jacobian(model("fig2"), [0.0, 0.0, 3.0])

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            jacobian(model("fig2"), [1.0, 1.0, 1.0], "backward")

    def test_fig3b_interior_attractor_is_stable(self):
        hi = attractors("fig3b")[1]
        assert hi.classification == STABLE
        assert np.all(hi.eigenvalues.real < 0)


class TestClassify:
    def test_fig2_boundary_attractor(self):
        cls, eig = classify(model("fig2"), [0.0, 0.0, 3.0])
        assert cls == BOUNDARY_ATTRACTING and eig is None

    def test_agrochemical_origin_not_attracting(self):
        cls, _ = classify(model("fig3b"), [0.0, 0.0, 0.0])
        assert cls != BOUNDARY_ATTRACTING

    def test_folded_tillage_saddle(self):
        saddle = find_equilibria(model("fig4_folded"))[1]
        cls, eig = classify(model("fig4_folded"), saddle.state)
        assert cls == SADDLE
        assert np.sum(eig.real > 0) == 1 and np.sum(eig.real < 0) == 1


class TestAttractorSet:
    def test_ordering_and_poverty_index(self):
        a = attractors("fig3b")
        assert tuple(a.states[0]) < tuple(a.states[1])
        assert a.poverty_index == 0

    def test_rejects_close_attractors(self):
        e = Equilibrium(np.array([0.0, 5.0]), BOUNDARY_ATTRACTING)
        f = Equilibrium(np.array([0.0, 5.00001]), BOUNDARY_ATTRACTING)
        with pytest.raises(ValueError):
            AttractorSet([e, f])

    def test_drops_non_attractors(self):
        e = Equilibrium(np.array([0.0, 5.0]), BOUNDARY_ATTRACTING)
        s = Equilibrium(np.array([2.0, 5.0]), SADDLE)
        assert len(AttractorSet([e, s])) == 1

    def test_match(self):
        a = attractors("fig4_folded")
        labels = a.match([[0.0, 5.0], [a.states[1, 0] + 5e-4, 5.0], [2.0, 5.0]], 1e-3)
        np.testing.assert_array_equal(labels, [0, 1, -1])

    def test_to_dict(self):
        d = attractors("fig3b")[1].to_dict(("k_a", "k_p", "k_q"))
        assert set(d["state"]) == {"k_a", "k_p", "k_q"}
        assert d["is_attractor"] is True
        assert all(len(pair) == 2 for pair in d["eigenvalues"])


class TestNewton:
    def test_converges_from_nearby_seed(self):
        m = model("fig4_folded")
        X, ok = newton_batch(m, [[2.0, 4.0], [4.2, 5.5]])
        assert ok.all()
        assert X[0, 0] == pytest.approx(2.0754, abs=1e-4)
        assert X[1, 0] == pytest.approx(3.9467, abs=1e-4)

    def test_seed_grid(self):
        g = seed_grid([(0, 10), (0, 1)], 3)
        assert g.shape == (9, 2)
        np.testing.assert_array_equal(g[0], [0, 0])
        np.testing.assert_array_equal(g[-1], [10, 1])

    def test_builtin_tillage_saddle_search_finds_only_boundary(self):
        eqs = find_equilibria(builtin_scenario("fig4"))
        assert [tuple(e.state) for e in eqs] == [(0.0, 5.0)]
