import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regenlab import LevyModel, SlowlyVarying
from regenlab.composition import part_counts, sample_poisson
from regenlab.errors import DomainError, UnsupportedFamilyError
from regenlab.exact import (
    decrement_row,
    dist_Kn,
    factorial_moment_constant,
    mean_Kn_dp,
    mean_Kn_exact,
    moment_recursion_check,
    moment_table,
    moments_diversity,
    moments_L,
    p1_series,
    poissonized_factorial_moment,
    poissonized_mean_exact,
    poissonized_p,
    recursion_residual_f,
    recursion_residual_p,
    sample_area_series,
    tail_moments_A,
    tauberian_gap,
    write_distribution_csv,
    write_moments_csv,
)
from regenlab.levy import laplace_exponent
from regenlab.pathsim import MultiplicativeRemainder, area_process, simulate_path, transform_gaps

from .conftest import ALL_MODELS, model_id

FULL_STICK = LevyModel.finite_atomic([(1.0, 1.0)])


def geometric_one_block(x0, n):
    """P(K_n = 1) for single-atom stick breaking: all points in the same piece."""
    # piece k has length x0 (1 - x0)^k
    return math.fsum((x0 * (1 - x0) ** k) ** n for k in range(2000))


class TestMomentsL:
    def test_zero(self, ml_half):
        assert moments_L(ml_half, 0.5, 0) == 1.0

    def test_examples(self, ml_half):
        assert moments_L(ml_half, 0.5, 1) == pytest.approx(2 / math.pi, rel=1e-14)
        assert moments_L(ml_half, 0.5, 2) == pytest.approx(2 / math.pi, rel=1e-14)

    def test_atom(self, half_atom):
        assert moments_L(half_atom, 1.0, 3) == pytest.approx(6 / (0.5 * 0.75 * 0.875), rel=1e-14)

    def test_drift_enters_total_exponent(self):
        model = LevyModel.finite_atomic([(0.5, 1.0)], drift=0.5)
        assert moments_L(model, 1.0, 2) == pytest.approx(2 / ((0.5 + 0.5) * (1.0 + 0.75)))

    @pytest.mark.parametrize("model", ALL_MODELS, ids=model_id)
    def test_table_invariants(self, model):
        table = moment_table(model, 1.0, 6)
        m = np.array(table.values)
        assert m[0] == 1 and np.all(m > 0)
        assert table.certified_rel_error < 1e-25
        # moments of a nonnegative variable are log-convex
        r = np.log(m)
        assert np.all(r[1:-1] <= (r[:-2] + r[2:]) / 2 + 1e-12)
        # while m_k / k! = 1 / prod Phi(j) is log-concave because Phi increases
        q = r - np.log([math.factorial(k) for k in range(7)])
        assert np.all(q[1:-1] >= (q[:-2] + q[2:]) / 2 - 1e-12)

    def test_negative_k(self, ml_half):
        with pytest.raises(DomainError):
            moments_L(ml_half, 0.5, -1)


class TestDiversity:
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_mittag_leffler(self, ml_half, k):
        assert moments_diversity(ml_half, k) == pytest.approx(math.factorial(k) / math.gamma(1 + k / 2), rel=1e-12)

    @pytest.mark.parametrize("theta", [0.0, 0.7, 2.0])
    @pytest.mark.parametrize("k", [1, 3])
    def test_gamma_scaled_L(self, theta, k):
        model = LevyModel.two_parameter(0.4, theta)
        assert moments_diversity(model, k) == pytest.approx(math.gamma(0.6) ** k * moments_L(model, 0.4, k),
                                                            rel=1e-9)

    def test_family(self, half_atom):
        with pytest.raises(UnsupportedFamilyError):
            moments_diversity(half_atom, 1)


class TestRecursionCheck:
    @pytest.mark.parametrize("model", ALL_MODELS, ids=model_id)
    @pytest.mark.parametrize("k", [1, 2, 5])
    def test_identity(self, model, k):
        assert abs(moment_recursion_check(model, k)) < 1e-12


class TestAreaMoments:
    def test_t_zero(self, two_atoms):
        assert tail_moments_A(two_atoms, 0.0, 2)[0] == pytest.approx(moments_L(two_atoms, 1.0, 2))

    def test_large_t(self, two_atoms):
        assert tail_moments_A(two_atoms, 200.0, 2)[0] < 1e-30

    def test_mean_area(self, half_atom):
        assert tail_moments_A(half_atom, 1.0, 1)[1] == pytest.approx(0.786939, abs=1e-6)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_series_representation(self, two_atoms, k):
        """Stick-breaking series draws of A reproduce the exact moments."""
        probability = LevyModel.finite_atomic([(x, w / 2.3) for x, w in two_atoms.atoms])
        A = sample_area_series(probability, 40000, seed=3)
        vals = A ** k
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - moments_L(probability, 1.0, k)) < 3 * se

    def test_drift_simulation(self):
        model = LevyModel.finite_atomic([(0.5, 1.0)], drift=0.5)
        A = np.array([area_process(simulate_path(model, 0.0, MultiplicativeRemainder(1e-10), 7, replicate=r))
                      for r in range(3000)])
        for k in (1, 2):
            se = (A ** k).std(ddof=1) / math.sqrt(len(A))
            assert abs((A ** k).mean() - moments_L(model, 1.0, k)) < 3 * se


class TestKnDistribution:
    def test_one_point(self, two_atoms):
        assert dist_Kn(two_atoms, 1).probs.tolist() == [1.0]

    @pytest.mark.parametrize("n", [1, 5, 30])
    def test_full_stick(self, n):
        assert dist_Kn(FULL_STICK, n).pmf(1) == pytest.approx(1.0)

    def test_two_points(self, half_atom):
        d = dist_Kn(half_atom, 2)
        np.testing.assert_allclose(d.probs, [1 / 3, 2 / 3], rtol=1e-14)
        assert d.pmf(1) == pytest.approx(geometric_one_block(0.5, 2), rel=1e-12)

    @pytest.mark.parametrize("n", [3, 6])
    def test_one_block_geometric(self, n):
        x0 = 0.3
        model = LevyModel.finite_atomic([(x0, 1.0)])
        assert dist_Kn(model, n).pmf(1) == pytest.approx(geometric_one_block(x0, n), rel=1e-12)

    @pytest.mark.parametrize("model", ALL_MODELS, ids=model_id)
    def test_normalised(self, model):
        for n in (1, 10, 200):
            p = dist_Kn(model, n).probs
            assert np.all(p >= 0)
            assert math.fsum(p) == pytest.approx(1.0, abs=1e-12)

    def test_scaling_invariance(self, two_atoms):
        scaled = LevyModel.finite_atomic([(x, 3 * w) for x, w in two_atoms.atoms])
        np.testing.assert_allclose(dist_Kn(two_atoms, 12).probs, dist_Kn(scaled, 12).probs, rtol=1e-12)

    def test_decrement_row(self, half_atom):
        np.testing.assert_allclose(decrement_row(half_atom, 2), [2 / 3, 1 / 3])

    def test_mean_matches_distribution(self):
        model = LevyModel.stable_like(0.6)
        means = mean_Kn_dp(model, 150)
        for n in (1, 17, 150):
            assert means[n] == pytest.approx(dist_Kn(model, n).mean, rel=1e-12)


class TestMeanKn:
    def test_one(self, ml_half):
        assert mean_Kn_exact(ml_half, 1) == pytest.approx(1.0)

    def test_two_points(self, half_atom):
        assert mean_Kn_exact(half_atom, 2) == pytest.approx(5 / 3, rel=1e-12)

    @pytest.mark.parametrize("model", [LevyModel.finite_atomic([(0.3, 0.7), (0.8, 1.6)]),
                                       LevyModel.two_parameter(0.5, 1.0),
                                       LevyModel.finite_atomic([(0.5, 1.0)], drift=0.4)],
                             ids=["atoms", "tp", "drift"])
    def test_alternating_matches_dp(self, model):
        dp = mean_Kn_dp(model, 60)
        for n in (5, 25, 60):
            assert mean_Kn_exact(model, n) == pytest.approx(dp[n], rel=1e-9)

    def test_sqrt_scaling(self, ml_half):
        assert mean_Kn_exact(ml_half, 1000) / math.sqrt(1000) == pytest.approx(2 / math.sqrt(math.pi), rel=0.1)


class TestPoissonized:
    def test_p1_empty(self, half_atom):
        assert p1_series(half_atom, 0.0) == 0.0

    @pytest.mark.parametrize("rho", [0.5, 3.0])
    def test_p1_full_stick(self, rho):
        assert p1_series(FULL_STICK, rho) == pytest.approx(-math.expm1(-rho), abs=1e-11)

    def test_p1_monte_carlo(self, half_atom):
        reps = 20000
        ones = 0
        for r in range(reps):
            path = simulate_path(half_atom, 0.0, MultiplicativeRemainder(1e-12), 13, replicate=r)
            pts = sample_poisson(1.0, 13, replicate=reps + r)
            ones += part_counts(transform_gaps(path), pts)[0] == 1
        p = p1_series(half_atom, 1.0)
        assert abs(ones / reps - p) < 3 * math.sqrt(p * (1 - p) / reps)

    def test_p_sums_to_one(self, two_atoms):
        rho = 4.0
        total = math.fsum(poissonized_p(two_atoms, j, rho) for j in range(0, 60))
        assert total == pytest.approx(1.0, abs=1e-11)

    def test_factorial_moment_first(self, two_atoms):
        rho = 6.0
        assert poissonized_factorial_moment(two_atoms, 1, rho) == pytest.approx(
            poissonized_mean_exact(two_atoms, rho), rel=1e-12)


class TestPoissonizedRecursions:
    def test_full_stick(self):
        assert abs(recursion_residual_p(FULL_STICK, 1, 1.0)) < 1e-8

    @pytest.mark.parametrize("model", [LevyModel.finite_atomic([(0.5, 1.0)]),
                                       LevyModel.finite_atomic([(0.3, 0.7), (0.8, 1.6)])], ids=["half", "two"])
    @pytest.mark.parametrize("rho", [1.0, 2.0, 5.0])
    def test_residuals(self, model, rho):
        for j in (1, 2, 3):
            assert abs(recursion_residual_p(model, j, rho)) < 1e-8
        for m in (1, 2):
            assert abs(recursion_residual_f(model, m, rho)) < 1e-8

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.05, 1.0), st.floats(0.1, 3.0)), min_size=1, max_size=3),
           st.floats(0.2, 6.0))
    def test_residual_property(self, atoms, rho):
        model = LevyModel.finite_atomic(atoms)
        assert abs(recursion_residual_p(model, 2, rho)) < 1e-8

    def test_atomic_only(self, ml_half):
        with pytest.raises(UnsupportedFamilyError):
            recursion_residual_p(ml_half, 1, 1.0)


class TestConstants:
    def test_examples(self, ml_half):
        assert factorial_moment_constant(ml_half, 0) == 1.0
        assert factorial_moment_constant(ml_half, 1) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-12)
        assert factorial_moment_constant(ml_half, 2) == pytest.approx(2.0, rel=1e-12)

    def test_alpha_one(self):
        model = LevyModel.stable_like(1.0, SlowlyVarying.logpow(-2.0))
        assert factorial_moment_constant(model, 1) == pytest.approx(1.0 / laplace_exponent(model, 1.0))

    def test_tauberian(self):
        model = LevyModel.two_parameter(0.5, 1.0)
        assert tauberian_gap(model, 0.0) == 0.0
        assert tauberian_gap(model, 1e6) < 1e-2 * laplace_exponent(model, 1.0)


class TestCsv:
    def test_moments(self):
        buf = io.StringIO()
        write_moments_csv([1.0, 2 / math.pi], buf)
        assert buf.getvalue().splitlines() == ["k,value", "0,1", "1,0.63661977236758138"]

    def test_distribution(self, half_atom):
        buf = io.StringIO()
        write_distribution_csv(dist_Kn(half_atom, 2), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "j,probability"
        assert float(lines[1].split(",")[1]) == pytest.approx(1 / 3, rel=1e-16)
