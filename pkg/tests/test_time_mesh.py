import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatadapt.errors import InvalidArgumentError
from heatadapt.time_mesh import (
    TimeMesh,
    check_grading,
    doerfler_mark,
    dumps_mesh,
    loads_mesh,
    refine,
    trisect,
    trisect_level,
    uniform_mesh,
)


def refine_sequence(seed, steps, G, n0=1):
    rng = np.random.default_rng(seed)
    mesh = uniform_mesh(1.0, n0)
    out = [mesh]
    for _ in range(steps):
        mesh = trisect(mesh, int(rng.integers(mesh.n_elements)), G)
        out.append(mesh)
    return out


def exact_points(mesh):
    total = mesh.ticks[-1]
    return {Fraction(k, total) for k in mesh.ticks}


class TestUniform:
    def test_four(self):
        m = uniform_mesh(1.0, 4)
        assert list(m.breakpoints) == [0, 0.25, 0.5, 0.75, 1.0]
        assert m.levels == (0, 0, 0, 0)
        assert m.h0 == 0.25

    def test_single(self):
        m = uniform_mesh(1.0, 1)
        assert list(m.breakpoints) == [0.0, 1.0]

    def test_two_on_longer_interval(self):
        assert list(uniform_mesh(2.0, 2).breakpoints) == [0.0, 1.0, 2.0]

    @pytest.mark.parametrize("t_end,n", [(1.0, 0), (0.0, 3), (-1.0, 2)])
    def test_rejects(self, t_end, n):
        with pytest.raises(InvalidArgumentError):
            uniform_mesh(t_end, n)


class TestTrisect:
    def test_middle_of_three(self):
        m = trisect(uniform_mesh(1.0, 3), 1, 1)
        assert m.n_elements == 5
        np.testing.assert_allclose(m.breakpoints, [0, 1 / 3, 4 / 9, 5 / 9, 2 / 3, 1], atol=1e-15)

    def test_recursive_neighbour(self):
        m = trisect(uniform_mesh(1.0, 3), 0, 1)
        np.testing.assert_allclose(m.breakpoints, [0, 1 / 9, 2 / 9, 1 / 3, 2 / 3, 1], atol=1e-15)
        out = trisect(m, 1, 2)
        assert out.n_elements == 9
        # [1/3, 2/3] went first, then [1/9, 2/9]
        assert out.levels == (1, 2, 2, 2, 1, 1, 1, 1, 0)

    def test_same_neighbour_out_of_reach_with_G1(self):
        m = trisect(uniform_mesh(1.0, 3), 0, 1)
        # distance 1/9 > 1 * 1/9? no: equal, so it is refined as well
        assert trisect(m, 1, 1).n_elements == 9
        # the element [0, 1/9] has gap 2/9 to [1/3, 2/3]: out of reach for G = 1
        assert trisect(m, 0, 1).n_elements == 7

    @pytest.mark.parametrize("G", [1, 2, 5])
    def test_uniform_adds_two(self, G):
        for n in (1, 4, 7):
            for e in range(n):
                assert trisect(uniform_mesh(1.0, n), e, G).n_elements == n + 2

    def test_bad_index(self):
        with pytest.raises(InvalidArgumentError):
            trisect(uniform_mesh(1.0, 3), 3, 1)
        with pytest.raises(InvalidArgumentError):
            trisect(uniform_mesh(1.0, 3), 1.0, 1)

    def test_sizes_follow_levels(self):
        mesh = refine_sequence(3, 25, 2)[-1]
        np.testing.assert_allclose(np.diff(mesh.breakpoints), mesh.sizes, rtol=1e-12)
        assert mesh.breakpoints[0] == 0 and mesh.breakpoints[-1] == 1.0


class TestTrisectLevel:
    def test_uniform_only_target_splits(self):
        m = uniform_mesh(1.0, 5)
        out = trisect_level(m, 2, 3 * 4 * m.h0)
        assert out.levels == (0, 0, 1, 1, 1, 0, 0)

    def test_coarse_neighbour_refined_first(self):
        m = TimeMesh((0, 1, 2, 3, 6, 9), (2, 2, 2, 1, 1), 2, 1.0, 1.0)
        out = trisect_level(m, 2, 3.0)
        assert out.levels == (2, 2, 3, 3, 3, 2, 2, 2, 1)

    @pytest.mark.parametrize("seed", range(10))
    def test_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        G = int(rng.integers(1, 4))
        n0 = int(rng.integers(1, 4))
        mesh = uniform_mesh(1.0, n0)
        for _ in range(15):
            e = int(rng.integers(mesh.n_elements))
            a = trisect(mesh, e, G)
            b = trisect_level(mesh, e, 3 * G * mesh.h0)
            assert a == b
            mesh = a


class TestGrading:
    def test_uniform(self):
        assert check_grading(uniform_mesh(1.0, 6), 1.0, 0.5)

    def test_adjacent_sizes(self):
        assert check_grading([0.0, 1.0, 1 + 1 / 9], 3, 1 / 3)
        assert not check_grading([0.0, 1.0, 1 + 1 / 27], 3, 1 / 3)

    def test_parameter_checks(self):
        with pytest.raises(InvalidArgumentError):
            check_grading(uniform_mesh(1.0, 2), 0.5, 0.5)
        with pytest.raises(InvalidArgumentError):
            check_grading(uniform_mesh(1.0, 2), 3, 1.0)

    @pytest.mark.parametrize("G", [1, 2, 4])
    def test_random_sequences_graded(self, G):
        for mesh in refine_sequence(G, 40, G):
            assert check_grading(mesh, 3, 3 ** (-1 / G))


class TestDoerfler:
    def test_greedy(self):
        assert doerfler_mark([4, 1, 1], 0.5).indices == (0,)

    def test_all(self):
        assert doerfler_mark([0.3, 2, 1e-3], 1.0).indices == (0, 1, 2)

    def test_tie_break(self):
        assert doerfler_mark([1, 1, 1, 1], 0.5).indices == (0, 1)

    def test_zero(self):
        assert doerfler_mark([0, 0], 0.5).indices == ()

    def test_bad_theta(self):
        with pytest.raises(InvalidArgumentError):
            doerfler_mark([1.0], 0.0)
        with pytest.raises(InvalidArgumentError):
            doerfler_mark([-1.0], 0.5)

    @given(
        st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=30),
        st.floats(0.05, 1.0),
    )
    def test_minimal(self, eta, theta):
        eta = np.asarray(eta)
        marks = doerfler_mark(eta, theta)
        if eta.sum() == 0:
            assert marks.indices == ()
            return
        idx = list(marks.indices)
        assert eta[idx].sum() >= theta * eta.sum() * (1 - 1e-12)
        # no smaller set can work: the k-1 largest values fall short
        k = len(idx)
        best = np.sort(eta)[::-1][: k - 1].sum()
        assert best < theta * eta.sum() or math.isclose(best, theta * eta.sum(), rel_tol=1e-12)


@settings(max_examples=25)
@given(
    st.integers(1, 3),
    st.integers(1, 3),
    st.lists(st.integers(0, 10**6), min_size=1, max_size=12),
)
def test_refinement_properties(n0, G, picks):
    mesh = uniform_mesh(1.0, n0)
    for p in picks:
        e = p % mesh.n_elements
        out = trisect(mesh, e, G)
        # never coarsens
        assert exact_points(mesh) <= exact_points(out)
        # every removed element is covered by its three children or finer
        for i in range(mesh.n_elements):
            key = mesh.key(i)
            if out.index_of(key) is None:
                start, lvl = key
                h = Fraction(1, 3 ** (lvl + 1))
                for c in range(3):
                    cs = start + c * h
                    assert any(out.index_of((cs, l2)) is not None for l2 in range(lvl + 1, out.depth + 1))
        assert out.index_of(mesh.key(e)) is None
        mesh = out


@pytest.mark.parametrize("seed", range(5))
def test_closure_ratio(seed):
    rng = np.random.default_rng(seed)
    G = int(rng.integers(1, 5))
    mesh = uniform_mesh(1.0, 1)
    n0, marked = mesh.n_elements, 0
    for _ in range(14):
        eta = rng.exponential(size=mesh.n_elements) * np.exp(-5 * mesh.breakpoints[:-1])
        marks = doerfler_mark(eta, float(rng.uniform(0.2, 0.8))).indices
        marked += len(marks)
        mesh = refine(mesh, marks, G)
        assert (mesh.n_elements - n0) / marked <= 50


def test_round_trip():
    mesh = refine_sequence(11, 20, 2, n0=2)[-1]
    assert loads_mesh(dumps_mesh(mesh)) == mesh


def test_loads_rejects_garbage():
    with pytest.raises(InvalidArgumentError):
        loads_mesh("nothing")
    text = dumps_mesh(uniform_mesh(1.0, 2)).replace("0.5", "0.4")
    with pytest.raises(InvalidArgumentError):
        loads_mesh(text)


def test_mesh_validates_levels():
    with pytest.raises(InvalidArgumentError):
        TimeMesh((0, 1, 3), (0, 0), 0, 0.5, 1.0)
