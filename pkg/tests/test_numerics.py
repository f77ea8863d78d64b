import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.hermite_e import hermegauss

from robustbell.numerics import (
    QuadratureRule,
    convex_hull,
    expect,
    gaussian_rule,
    load_rule,
    mc_expect,
    minimize_scalar,
    sobol,
)
from robustbell.rng import substream


def normal_moment(p: int) -> float:
    # E[z^p] for z ~ N(0,1): 0 odd, (p-1)!! even
    if p % 2 == 1:
        return 0.0
    out = 1.0
    for m in range(p - 1, 0, -2):
        out *= m
    return out


class TestGaussianRule:
    def test_weights_sum_to_one(self):
        for size in (1, 2, 3, 5, 10, 40, 100):
            rule = gaussian_rule(size)
            assert abs(float(np.sum(rule.weights)) - 1.0) <= 1e-12

    def test_tiny_rules(self):
        one = gaussian_rule(1)
        assert one.knots.tolist() == [0.0] and one.weights.tolist() == [1.0]
        two = gaussian_rule(2)
        assert two.knots.tolist() == [-1.0, 1.0]
        assert two.weights.tolist() == [0.5, 0.5]

    @pytest.mark.parametrize("size", [2, 5, 10, 40])
    def test_polynomial_exactness(self, size):
        rule = gaussian_rule(size)
        for p in range(0, min(2 * size - 1, 20) + 1):
            got = float(np.sum(rule.weights * rule.knots**p))
            want = normal_moment(p)
            if want == 0.0:
                assert abs(got) <= 1e-8
            else:
                assert abs(got - want) <= 1e-8 * abs(want)

    def test_matches_probabilists_hermite(self):
        # independent oracle: numpy's Hermite_e recurrence
        x, w = hermegauss(17)
        rule = gaussian_rule(17)
        assert np.allclose(rule.knots, x, atol=1e-12)
        assert np.allclose(rule.weights, w / math.sqrt(2.0 * math.pi), atol=1e-13)

    def test_symmetry(self):
        rule = gaussian_rule(31)
        assert np.array_equal(rule.knots, -rule.knots[::-1])
        assert np.array_equal(rule.weights, rule.weights[::-1])

    def test_size_validation(self):
        with pytest.raises(ValueError):
            gaussian_rule(0)

    def test_rule_invariants_enforced(self):
        with pytest.raises(ValueError):
            QuadratureRule(np.array([0.0, 1.0]), np.array([0.6, 0.5]))
        with pytest.raises(ValueError):
            QuadratureRule(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            QuadratureRule(np.array([-1.0, 1.0]), np.array([1.5, -0.5]))


class TestExpect:
    def test_variance_and_lognormal(self):
        rule = gaussian_rule(40)
        assert abs(expect(rule, lambda z: z**2) - 1.0) <= 1e-12
        sigma = 0.3
        want = math.exp(sigma**2 / 2.0)
        assert abs(expect(rule, lambda z: np.exp(sigma * z)) - want) <= 1e-10

    def test_scalar_only_integrand(self):
        rule = gaussian_rule(10)
        got = expect(rule, lambda z: float(z) ** 2)  # not vectorizable
        assert abs(got - 1.0) <= 1e-12

    def test_nonfinite_integrand_rejected(self):
        rule = gaussian_rule(5)
        with pytest.raises(ValueError, match="non-finite"):
            expect(rule, lambda z: np.where(z > 0, np.inf, 1.0))

    def test_mc_expect_deterministic_and_converges(self):
        f = lambda z: z**2
        a = mc_expect(f, 4000, substream(7, "mc"))
        b = mc_expect(f, 4000, substream(7, "mc"))
        assert a == b
        assert abs(a - 1.0) < 0.1


class TestLoadRule:
    def test_round_trip_with_header_and_comments(self, tmp_path):
        rule = gaussian_rule(9)
        path = tmp_path / "rule.csv"
        lines = ["# nine-point rule", "knot,weight"]
        lines += [f"{float(z)!r},{float(w)!r}" for z, w in zip(rule.knots, rule.weights)]
        path.write_text("\n".join(lines) + "\n")
        back = load_rule(path)
        assert np.array_equal(np.asarray(back.knots), np.asarray(rule.knots))
        assert np.array_equal(np.asarray(back.weights), np.asarray(rule.weights))

    def test_whitespace_separated(self, tmp_path):
        path = tmp_path / "rule.txt"
        path.write_text("-1.0 0.5\n1.0 0.5\n")
        back = load_rule(path)
        assert back.knots.tolist() == [-1.0, 1.0]

    def test_garbage_after_rows_named_with_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("-1.0,0.5\n1.0,0.5\nnot a row\n")
        with pytest.raises(ValueError, match="bad.csv:3"):
            load_rule(path)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,0.5,9\n")
        with pytest.raises(ValueError, match="two columns"):
            load_rule(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# nothing\n")
        with pytest.raises(ValueError, match="no rule rows"):
            load_rule(path)


class TestMinimizeScalar:
    def test_quadratic(self):
        c = math.pi / 10.0
        x, fx = minimize_scalar(lambda u: (u - c) ** 2, 0.0, 1.0, tol=1e-8)
        assert abs(x - c) <= 1e-6
        assert fx <= 1e-12

    def test_warm_start_hits_same_minimum(self):
        f = lambda u: (u - 0.7) ** 4 + 0.1 * u
        x1, f1 = minimize_scalar(f, 0.0, 1.0, tol=1e-9)
        x2, f2 = minimize_scalar(f, 0.0, 1.0, tol=1e-9, x0=0.65)
        assert abs(x1 - x2) <= 1e-5
        assert abs(f1 - f2) <= 1e-10

    def test_kink(self):
        x, _ = minimize_scalar(lambda u: abs(u - 0.3), 0.0, 1.0, tol=1e-8)
        assert abs(x - 0.3) <= 1e-6

    def test_boundary_minimum_approached(self):
        # monotone objective: converges toward the boundary (endpoint checks
        # are the caller's job, per the contract)
        x, _ = minimize_scalar(lambda u: u, 0.0, 1.0, tol=1e-6)
        assert x <= 1e-3

    def test_validation(self):
        with pytest.raises(ValueError):
            minimize_scalar(lambda u: u, 1.0, 0.0)
        with pytest.raises(ValueError):
            minimize_scalar(lambda u: u, 0.0, 1.0, tol=0.0)

    @settings(max_examples=30, deadline=None)
    @given(c=st.floats(min_value=0.05, max_value=0.95))
    def test_finds_quadratic_minimum_property(self, c):
        x, _ = minimize_scalar(lambda u: (u - c) ** 2, 0.0, 1.0, tol=1e-8)
        assert abs(x - c) <= 1e-5


class TestSobol:
    def test_deterministic(self):
        assert np.array_equal(sobol(16, 3), sobol(16, 3))

    def test_range_and_first_point(self):
        pts = sobol(8, 2, skip=1)
        assert np.all(pts >= 0.0) and np.all(pts < 1.0)
        assert np.array_equal(pts[0], np.array([0.5, 0.5]))

    def test_skip_shifts(self):
        a = sobol(8, 2, skip=1)
        b = sobol(4, 2, skip=5)
        assert np.array_equal(a[4:], b)

    def test_dimension_cap(self):
        with pytest.raises(ValueError):
            sobol(4, 9)
        with pytest.raises(ValueError):
            sobol(4, 0)

    def test_empty(self):
        assert sobol(0, 2).shape == (0, 2)


class TestHull:
    def test_square_contains(self):
        hull = convex_hull([[0, 0], [1, 0], [1, 1], [0, 1]])
        assert hull.contains([0.5, 0.5])
        assert hull.contains([0.0, 0.0])
        assert not hull.contains([1.5, 0.5])
        flags = hull.contains(np.array([[0.2, 0.2], [2.0, 2.0]]))
        assert flags.tolist() == [True, False]

    def test_fill_inside_and_deterministic(self):
        hull = convex_hull([[0, 0], [2, 0], [1, 1.5]])
        pts = hull.fill(50)
        assert pts.shape == (50, 2)
        assert np.all(hull.contains(pts))
        assert np.array_equal(pts, hull.fill(50))

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            convex_hull([[0, 0], [1, 1], [2, 2]])  # collinear
        with pytest.raises(ValueError):
            convex_hull([[0, 0], [1, 1]])  # too few

    def test_dimension_mismatch(self):
        hull = convex_hull([[0, 0], [1, 0], [0, 1]])
        with pytest.raises(ValueError):
            hull.contains([0.1, 0.1, 0.1])
