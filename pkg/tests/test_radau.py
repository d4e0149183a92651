import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial.legendre import leggauss

from conftest import random_spd_system
from heatadapt.errors import InvalidArgumentError
from heatadapt.experiments import fit_rate
from heatadapt.gelfand import DiscreteSystem
from heatadapt.petrov import assemble_pg
from heatadapt.radau import (
    ModalSolution,
    PiecewiseQuadraticRhs,
    RhsFunction,
    adaptive_loop,
    crank_nicolson_solve,
    estimate,
    eval_spline,
    nodal_error,
    radau_step,
    residual_moments,
    solve_time,
    stability_function,
    xnorm_error,
)
from heatadapt.time_mesh import check_grading, uniform_mesh

SCALAR = DiscreteSystem([[1.0]], [[1.0]])
ONE = np.ones(1)


def random_quadratic_rhs(rng, pts, dim):
    return PiecewiseQuadraticRhs(pts, rng.standard_normal((pts.size - 1, 3, dim)))


def random_breakpoints(rng, n):
    h = rng.uniform(0.2, 1.0, n)
    return np.concatenate([[0.0], np.cumsum(h) / h.sum()])


class TestStep:
    def test_scalar_stages(self):
        k1, k2, u = radau_step(SCALAR, ONE, RhsFunction.zero(1), 0.0, 1.0)
        assert k1[0] == pytest.approx(-8 / 11, abs=1e-15)
        assert k2[0] == pytest.approx(-4 / 11, abs=1e-15)
        assert u[0] == pytest.approx(4 / 11, abs=1e-15)

    @given(st.floats(1e-3, 100.0))
    def test_stability_function(self, z):
        s = DiscreteSystem([[1.0]], [[z]])
        _, _, u = radau_step(s, ONE, RhsFunction.zero(1), 0.0, 1.0)
        assert u[0] == pytest.approx(float(stability_function(-z)), abs=1e-12)

    def test_quadrature_limit(self):
        s = DiscreteSystem([[1.0]], [[1e-14]])
        f = RhsFunction(lambda t: np.array([np.cos(t)]), 1)
        a, h = 0.3, 0.5
        k1, k2, u = radau_step(s, np.zeros(1), f, a, a + h)
        assert k1[0] == pytest.approx(np.cos(a + h / 3), abs=1e-12)
        assert k2[0] == pytest.approx(np.cos(a + h), abs=1e-12)
        assert u[0] == pytest.approx(h * (0.75 * np.cos(a + h / 3) + 0.25 * np.cos(a + h)), abs=1e-12)

    def test_empty_element(self):
        with pytest.raises(InvalidArgumentError):
            radau_step(SCALAR, ONE, RhsFunction.zero(1), 1.0, 1.0)


class TestSolve:
    def test_zero(self, rng):
        s = random_spd_system(rng, 4)
        sol = solve_time(s, uniform_mesh(1.0, 5), None, np.zeros(4))
        assert not np.any(sol.values) and not np.any(sol.k1) and not np.any(sol.k2)

    def test_two_steps(self):
        sol = solve_time(SCALAR, uniform_mesh(1.0, 2), None, ONE)
        # R(-1/2) = (5/6) / (33/24) = 20/33
        assert sol.values[-1, 0] == pytest.approx((20 / 33) ** 2, abs=1e-15)

    def test_eigenvector_products(self, heat16):
        _, system, _, _ = heat16
        eig = system.spectral()
        pts = np.array([0.0, 0.1, 0.15, 0.6, 1.0])
        for i in (0, 7, 40):
            sol = solve_time(system, pts, None, eig.vectors[:, i])
            factors = stability_function(-eig.eigenvalues[i] * np.diff(pts))
            expected = np.concatenate([[1.0], np.cumprod(factors)])
            coords = system.modal(sol.values.T)[i]
            np.testing.assert_allclose(coords, expected, atol=1e-10)

    def test_modal_decoupling(self, rng):
        lam = np.array([0.5, 3.0, 40.0, 900.0])
        diag = DiscreteSystem(np.eye(4), np.diag(lam))
        pts = random_breakpoints(rng, 9)
        u0 = rng.standard_normal(4)
        full = solve_time(diag, pts, None, u0)
        for i in range(4):
            single = solve_time(DiscreteSystem([[1.0]], [[lam[i]]]), pts, None, u0[i:i + 1])
            np.testing.assert_allclose(full.values[:, i], single.values[:, 0], rtol=1e-14, atol=1e-300)

    def test_continuity(self, rng):
        s = random_spd_system(rng, 5)
        pts = random_breakpoints(rng, 8)
        sol = solve_time(s, pts, random_quadratic_rhs(rng, pts, 5), rng.standard_normal(5))
        for e in range(sol.n_elements):
            right, _ = sol.evaluate(np.array([pts[e + 1]]), np.array([e]))
            np.testing.assert_allclose(right[0], sol.values[e + 1], rtol=1e-12, atol=1e-14)


class TestEval:
    def test_scalar_example(self):
        sol = solve_time(SCALAR, uniform_mesh(1.0, 1), None, ONE)
        u, du = eval_spline(sol, 1.0)
        assert u[0] == pytest.approx(4 / 11, abs=1e-15)
        assert du[0] == pytest.approx(-4 / 11, abs=1e-15)
        u, du = eval_spline(sol, 0.0)
        assert u[0] == 1.0
        assert du[0] == pytest.approx(-10 / 11, abs=1e-15)
        t = 0.37
        u, _ = eval_spline(sol, t)
        assert u[0] == pytest.approx(1 + (3 * t * t - 10 * t) / 11, abs=1e-15)

    def test_outside(self):
        sol = solve_time(SCALAR, uniform_mesh(1.0, 2), None, ONE)
        with pytest.raises(InvalidArgumentError):
            eval_spline(sol, 1.5)
        with pytest.raises(InvalidArgumentError):
            eval_spline(sol, -0.1)

    def test_left_element_at_breakpoint(self):
        sol = solve_time(SCALAR, uniform_mesh(1.0, 2), None, ONE)
        _, du = eval_spline(sol, 0.5)
        assert du[0] == pytest.approx(sol.k2[0, 0], abs=1e-15)


class TestResidual:
    def test_scalar_example(self):
        sol = solve_time(SCALAR, uniform_mesh(1.0, 1), None, ONE)
        mean, end = residual_moments(SCALAR, sol, None, 0)
        assert abs(mean[0]) < 1e-15 and abs(end[0]) < 1e-15
        # r(t) = -(1 - t)(1 - 3t)/11, whose derivative is (4 - 6t)/11
        for t in (0.0, 0.2, 0.9):
            u, du = sol.evaluate(t)
            assert -du[0] - u[0] == pytest.approx(-(1 - t) * (1 - 3 * t) / 11, abs=1e-15)

    @given(st.integers(0, 10**6))
    def test_random_quadratic_data(self, seed):
        rng = np.random.default_rng(seed)
        s = random_spd_system(rng, 5)
        pts = random_breakpoints(rng, int(rng.integers(1, 9)))
        F = random_quadratic_rhs(rng, pts, 5)
        sol = solve_time(s, pts, F, rng.standard_normal(5))
        for e in range(sol.n_elements):
            mean, end = residual_moments(s, sol, F, e)
            assert np.max(np.abs(mean)) <= 1e-10
            assert np.max(np.abs(end)) <= 1e-10

    def test_cubic_data(self):
        F = RhsFunction(lambda t: np.array([t**3]), 1)
        sol = solve_time(SCALAR, uniform_mesh(1.0, 1), F, ONE)
        mean, end = residual_moments(SCALAR, sol, F, 0, projected=True)
        assert abs(end[0]) < 1e-15 and abs(mean[0]) < 1e-15
        raw_mean, _ = residual_moments(SCALAR, sol, F, 0, projected=False)
        assert abs(raw_mean[0]) > 1e-3


class TestEstimate:
    def test_scalar_example(self):
        sol = solve_time(SCALAR, uniform_mesh(1.0, 1), None, ONE)
        est = estimate(SCALAR, sol)
        assert est.total_sq == pytest.approx(4 / 121, rel=1e-14)
        assert est.total == pytest.approx(2 / 11, rel=1e-14)

    def test_manufactured_quadratic(self, rng):
        s = random_spd_system(rng, 4)
        a, b, c = rng.standard_normal((3, 4))

        def F(t):
            return s.M @ (b + 2 * c * t) + s.K @ (a + b * t + c * t * t)

        rhs = RhsFunction(F, 4, quadratic=True)
        sol = solve_time(s, random_breakpoints(rng, 5), rhs, a)
        exact = a + b * 0.7 + c * 0.49
        np.testing.assert_allclose(sol.evaluate(0.7)[0], exact, rtol=1e-10)
        assert estimate(s, sol, rhs).total <= 1e-10 * np.linalg.norm(a)

    def test_modal_sum(self, rng):
        s = random_spd_system(rng, 5)
        eig = s.spectral()
        pts = random_breakpoints(rng, 6)
        u0 = rng.standard_normal(5)
        full = estimate(s, solve_time(s, pts, None, u0)).eta_sq
        coords = s.modal(u0)
        parts = sum(
            estimate(sc, solve_time(sc, pts, None, coords[i:i + 1])).eta_sq
            for i, sc in enumerate(DiscreteSystem([[1.0]], [[lam]]) for lam in eig.eigenvalues)
        )
        np.testing.assert_allclose(full, parts, rtol=1e-9)

    def test_stiffness_scaling(self):
        # eta^2 for f = 0 and one step of size 1: R(-c) enters through k1, k2
        etas = []
        for c in (1.0, 4.0):
            sol = solve_time(DiscreteSystem([[1.0]], [[c]]), uniform_mesh(1.0, 1), None, ONE)
            k1, k2 = sol.k1[0, 0], sol.k2[0, 0]
            # r'(x) = -1.5 (k2 - k1) - c (k1 + (k2 - k1)(3x - 1)/2) on [0, 1], V*-weight 1/c
            x, w = leggauss(5)
            x, w = 0.5 * (x + 1), 0.5 * w
            r = -1.5 * (k2 - k1) - c * (k1 + (k2 - k1) * (3 * x - 1) / 2)
            etas.append(estimate(DiscreteSystem([[1.0]], [[c]]), sol).total_sq / (w @ r**2 / c))
        np.testing.assert_allclose(etas, 1.0, rtol=1e-13)

    def test_nonnegative(self, rng):
        s = random_spd_system(rng, 3)
        pts = random_breakpoints(rng, 7)
        est = estimate(s, solve_time(s, pts, random_quadratic_rhs(rng, pts, 3), np.ones(3)))
        assert np.all(est.eta_sq >= 0)
        assert est.total_sq == pytest.approx(est.eta_sq.sum())


class TestCrankNicolson:
    def test_scalar(self):
        sol = crank_nicolson_solve(SCALAR, uniform_mesh(1.0, 1), None, ONE)
        assert sol.values[-1, 0] == pytest.approx(1 / 3, abs=1e-15)

    def test_stiff_limit(self):
        s = DiscreteSystem([[1.0]], [[1e8]])
        cn = crank_nicolson_solve(s, uniform_mesh(1.0, 1), None, ONE).values[-1, 0]
        hyb = solve_time(s, uniform_mesh(1.0, 1), None, ONE).values[-1, 0]
        assert cn == pytest.approx(-1.0, abs=1e-7)
        assert abs(hyb) < 1e-7
        # amplitude of the oscillating CN mode stays at one, the hybrid mode is damped
        assert abs(cn) > 0.99 and abs(hyb) < 1e-6

    @pytest.mark.parametrize("solver", [solve_time, crank_nicolson_solve])
    def test_steady_state(self, solver):
        c, lam = 2.5, 4.0
        s = DiscreteSystem([[1.0]], [[lam]])
        sol = solver(s, [0.0, 0.3, 1.0], RhsFunction.constant([c]), np.array([c / lam]))
        np.testing.assert_allclose(sol.values[:, 0], c / lam, rtol=1e-15)


class TestAdaptive:
    def test_zero_data(self, rng):
        s = random_spd_system(rng, 3)
        hist = adaptive_loop(s, None, np.zeros(3))
        assert len(hist) == 1 and hist[0].eta == 0.0

    def test_theta_one_stays_uniform(self):
        hist = adaptive_loop(SCALAR, None, ONE, theta=1.0, G=2, max_iter=4)
        for rec in hist:
            assert len(set(rec.mesh.levels)) == 1
        assert [r.n_elements for r in hist] == [1, 3, 9, 27]

    def test_steps_grow_away_from_zero(self, heat16):
        _, system, u0, _ = heat16
        hist = adaptive_loop(system, None, u0, theta=0.5, G=4, max_iter=12)
        h = hist[-1].mesh.sizes
        assert np.all(np.diff(h) >= 0)
        assert h[0] < h[-1] / 100
        for rec in hist:
            assert check_grading(rec.mesh, 3, 3 ** (-1 / 4))

    def test_rejects_nonuniform_start(self):
        from heatadapt.time_mesh import trisect

        with pytest.raises(InvalidArgumentError):
            adaptive_loop(SCALAR, None, ONE, mesh=trisect(uniform_mesh(1.0, 2), 0, 1))

    def test_reliability_band(self, heat16):
        _, system, u0, _ = heat16
        ref = ModalSolution(system, u0)
        hist = adaptive_loop(system, None, u0, max_iter=10)
        ratio = [r.eta / xnorm_error(system, r.solution, ref) for r in hist]
        assert max(ratio) / min(ratio) <= 3


class TestErrors:
    def test_self_distance(self, rng):
        s = random_spd_system(rng, 4)
        pts = random_breakpoints(rng, 5)
        sol = solve_time(s, pts, None, np.ones(4))
        assert xnorm_error(s, sol, sol) == 0.0

    def test_spline_reference_matches_modal(self):
        ref = ModalSolution(SCALAR, ONE)
        coarse = solve_time(SCALAR, uniform_mesh(1.0, 4), None, ONE)
        fine = solve_time(SCALAR, uniform_mesh(1.0, 729), None, ONE)
        assert xnorm_error(SCALAR, coarse, fine) == pytest.approx(xnorm_error(SCALAR, coarse, ref), rel=1e-4)

    def test_rates(self):
        ref = ModalSolution(SCALAR, ONE)
        ns = [8, 16, 32, 64, 128]
        sols = [solve_time(SCALAR, uniform_mesh(1.0, n), None, ONE) for n in ns]
        x_rate = fit_rate(ns, [xnorm_error(SCALAR, s, ref) for s in sols])
        nodal_rate = fit_rate(ns, [nodal_error(SCALAR, s, ref) for s in sols])
        assert x_rate == pytest.approx(2.0, abs=0.1)
        assert nodal_rate == pytest.approx(3.0, abs=0.1)

    def test_near_best_approximation(self):
        # best S^2 approximation of exp(-t) in the X-norm by least squares
        ref = ModalSolution(SCALAR, ONE)
        xg, wg = leggauss(10)
        xg, wg = 0.5 * (xg + 1), 0.5 * wg
        ratios = []
        for n in (4, 8, 16, 32):
            pts = np.linspace(0, 1, n + 1)
            Gx = assemble_pg(1.0, pts).Gx
            b = np.zeros(2 * n + 1)
            basis = []
            for e in range(n):
                h = pts[e + 1] - pts[e]
                t = pts[e] + h * xg
                vals = [1 - xg, xg, 4 * xg * (1 - xg)]
                ders = [-np.ones_like(xg) / h, np.ones_like(xg) / h, (4 - 8 * xg) / h]
                for j, v, d in zip((e, e + 1, n + 1 + e), vals, ders):
                    b[j] += h * (wg @ (np.exp(-t) * v - np.exp(-t) * d))
                basis.append((e, t, h))
            c = np.linalg.solve(Gx, b)
            err2 = 0.0
            for e, t, h in basis:
                v = c[e] * (1 - xg) + c[e + 1] * xg + c[n + 1 + e] * 4 * xg * (1 - xg)
                d = (c[e + 1] - c[e] + c[n + 1 + e] * (4 - 8 * xg)) / h
                err2 += h * (wg @ ((v - np.exp(-t)) ** 2 + (d + np.exp(-t)) ** 2))
            sol = solve_time(SCALAR, pts, None, ONE)
            ratios.append(xnorm_error(SCALAR, sol, ref) / math.sqrt(err2))
        assert all(1 - 1e-9 <= r <= 3 for r in ratios)
