import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from regenlab import LevyModel
from regenlab.composition import COMPLETE, UNRESOLVED
from regenlab.errors import DomainError, HorizonExceededError, PreconditionError
from regenlab.levy import laplace_exponent, laplace_exponent_total, poissonized_laplace, tail
from regenlab.pathsim import (
    Diffeomorphism,
    FirstPassage,
    FixedTime,
    MultiplicativeRemainder,
    SubordinatorPath,
    area_process,
    compensator,
    count_additive_jumps,
    count_gaps,
    first_passage,
    functional_L,
    is_integrable,
    lebesgue_of_range,
    simulate_path,
    tail_correction,
    transform_gaps,
    write_path_csv,
)

LOG2 = math.log(2.0)


def manual_path(epochs, jumps, horizon, drift=0.0, model=None):
    return SubordinatorPath(np.array(epochs, float), np.array(jumps, float), drift, horizon, 0.0, model)


def within_3se(samples, target):
    samples = np.asarray(samples, float)
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    return abs(samples.mean() - target) < 3 * se


class TestDiffeomorphism:
    MAPS = [Diffeomorphism.exponential(), Diffeomorphism.power_tail(0.5), Diffeomorphism.power_tail(3.0)]

    @pytest.mark.parametrize("phi", MAPS, ids=str)
    def test_shape(self, phi):
        y = np.geomspace(1e-8, 30.0, 200)
        v = phi(y)
        assert phi(0.0) == 0.0
        assert np.all(np.diff(v) > 0)
        assert phi(1e300) == pytest.approx(1.0)
        d = phi.derivative(y)
        assert np.all(d > 0) and np.all(np.diff(d) < 0)

    @pytest.mark.parametrize("phi", MAPS, ids=str)
    def test_inverse(self, phi):
        x = np.linspace(0.0, 0.999, 500)
        np.testing.assert_allclose(phi(phi.inverse(x)), x, atol=1e-12)

    @pytest.mark.parametrize("phi", MAPS, ids=str)
    def test_derivative_numeric(self, phi):
        y = np.array([0.0, 0.3, 2.0, 15.0])
        h = 1e-6
        # differences of the complement avoid cancellation near 1
        numeric = (phi.complement(y) - phi.complement(y + h)) / h
        np.testing.assert_allclose(phi.derivative(y), numeric, rtol=1e-4)

    @settings(max_examples=50)
    @given(st.floats(0.0, 50.0), st.floats(1e-12, 10.0))
    def test_increment_matches_difference(self, y0, dy):
        phi = Diffeomorphism.power_tail(2.0)
        inc = phi.increment(y0, dy)
        assert inc == pytest.approx(phi(y0 + dy) - phi(y0), rel=1e-9, abs=1e-15)

    def test_bad_beta(self):
        with pytest.raises(DomainError):
            Diffeomorphism.power_tail(0.0)

    @pytest.mark.parametrize("beta,alpha,ok", [(3.0, 0.5, True), (1.0, 0.5, False), (1.0, 0.6, True)])
    def test_integrability_screen(self, beta, alpha, ok):
        assert is_integrable(Diffeomorphism.power_tail(beta), alpha) is ok
        assert is_integrable(Diffeomorphism.exponential(), alpha)


class TestSimulatePath:
    def test_determinism(self, ml_half):
        a = simulate_path(ml_half, 1e-5, FixedTime(2.0), seed=11, replicate=3)
        b = simulate_path(ml_half, 1e-5, FixedTime(2.0), seed=11, replicate=3)
        np.testing.assert_array_equal(a.epochs, b.epochs)
        np.testing.assert_array_equal(a.jumps, b.jumps)
        c = simulate_path(ml_half, 1e-5, FixedTime(2.0), seed=11, replicate=4)
        assert not np.array_equal(a.jumps[:5], c.jumps[:5])

    def test_invariants(self):
        model = LevyModel.stable_like(0.6)
        path = simulate_path(model, 1e-4, FixedTime(3.0), seed=1)
        assert np.all(np.diff(path.epochs) > 0)
        assert np.all(path.jumps >= 1e-4 * (1 - 1e-12))
        assert np.all(np.diff(path.S_after) >= 0)
        assert path.S_at(0.0) == 0.0

    def test_eps_zero_needs_finite_measure(self, ml_half):
        with pytest.raises(PreconditionError):
            simulate_path(ml_half, 0.0, FixedTime(1.0), seed=0)

    def test_poisson_jump_count(self, half_atom):
        counts = np.array([simulate_path(half_atom, 0.0, FixedTime(10.0), 7, replicate=r).n_jumps
                           for r in range(2000)])
        assert within_3se(counts, 10.0)
        # chi-square goodness of fit against Poisson(10)
        edges = np.arange(0, 22)
        observed = np.array([np.sum(counts == k) for k in edges[:-1]] + [np.sum(counts >= edges[-1])])
        probs = np.append(stats.poisson.pmf(edges[:-1], 10.0), stats.poisson.sf(edges[-1] - 1, 10.0))
        chi2 = np.sum((observed - 2000 * probs) ** 2 / (2000 * probs))
        assert stats.chi2.sf(chi2, len(probs) - 1) > 1e-3

    @pytest.mark.parametrize("model", [LevyModel.two_parameter(0.5, 1.0), LevyModel.finite_atomic([(0.3, 2.0)])],
                             ids=["tp", "atomic"])
    @pytest.mark.parametrize("k,t", [(1, 1.0), (2, 0.5)])
    def test_laplace_identity(self, model, k, t):
        eps = 0.0 if model.is_atomic else 1e-7
        vals = [math.exp(-k * simulate_path(model, eps, FixedTime(t), 3, replicate=r).S_end) for r in range(4000)]
        assert within_3se(vals, math.exp(-t * laplace_exponent(model, k)))

    def test_jump_law_matches_tail(self):
        model = LevyModel.two_parameter(0.4, 1.5)
        eps = 1e-3
        path = simulate_path(model, eps, FixedTime(3000.0 / tail(model, -math.expm1(-eps))), seed=5)
        x = -np.expm1(-path.jumps)
        x_min = -math.expm1(-eps)
        for q in (0.002, 0.01, 0.1, 0.5):
            expected = tail(model, q) / tail(model, x_min)
            observed = np.mean(x >= q)
            assert abs(observed - expected) < 4 * math.sqrt(expected * (1 - expected) / len(x))

    def test_remainder_stop(self, ml_half):
        model = LevyModel.two_parameter(0.5, 1.0)
        path = simulate_path(model, 1e-6, MultiplicativeRemainder(1e-4), seed=2)
        assert math.exp(-path.S_end) < 1e-4
        assert math.exp(-path.S_before[-1]) >= 1e-4

    def test_killed_path(self, ml_half):
        path = simulate_path(ml_half, 1e-5, MultiplicativeRemainder(1e-12), seed=9)
        assert path.killed
        assert transform_gaps(path).residual == COMPLETE

    def test_first_passage_stop_with_drift(self):
        model = LevyModel.finite_atomic([(0.5, 0.1)], drift=1.0)
        path = simulate_path(model, 0.0, FirstPassage(3.0), seed=0)
        assert path.S_end >= 3.0 - 1e-12

    def test_horizon_exceeded(self):
        with pytest.raises(HorizonExceededError) as info:
            simulate_path(LevyModel.two_parameter(0.5, 1.0), 1e-6, FirstPassage(500.0), seed=0, max_jumps=100)
        assert info.value.partial.n_jumps == 100

    def test_compensation_drift(self, ml_half):
        path = simulate_path(ml_half, 1e-4, FixedTime(1.0), seed=0, compensate=True)
        assert path.small_jump_drift > 0


class TestGapsAndCounts:
    def test_single_jump(self):
        delta = 0.7
        gaps = transform_gaps(manual_path([0.5], [delta], 1.0))
        np.testing.assert_allclose([gaps.lefts[0], gaps.rights[0]], [0.0, -math.expm1(-delta)])
        assert gaps.frontier == pytest.approx(-math.expm1(-delta))

    def test_two_halvings(self):
        gaps = transform_gaps(manual_path([0.3, 0.8], [LOG2, LOG2], 1.0))
        np.testing.assert_allclose(gaps.lefts, [0.0, 0.5], atol=1e-15)
        np.testing.assert_allclose(gaps.rights, [0.5, 0.75], atol=1e-15)
        assert gaps.frontier == pytest.approx(0.75)
        assert gaps.residual == UNRESOLVED
        assert count_gaps(gaps, 0.3) == 1
        assert count_gaps(gaps, 0.9) == 0

    def test_tiling(self, ml_half):
        path = simulate_path(LevyModel.two_parameter(0.5, 1.0), 1e-6, MultiplicativeRemainder(1e-6), seed=4)
        gaps = transform_gaps(path)
        assert gaps.total_length == pytest.approx(gaps.frontier, rel=1e-12)

    def test_additive_counts_atom(self, half_atom):
        counts = [count_additive_jumps(simulate_path(half_atom, 0.0, FixedTime(10.0), 1, replicate=r), LOG2)
                  for r in range(2000)]
        assert within_3se(counts, 10.0)
        var = np.var(counts, ddof=1)
        assert abs(var - 10.0) < 3 * 10.0 * math.sqrt(2.0 / 2000) * 1.5
        path = simulate_path(half_atom, 0.0, FixedTime(10.0), 1)
        assert count_additive_jumps(path, 1.0) == 0

    def test_additive_counts_stable(self):
        model = LevyModel.stable_like(0.5)
        counts = [count_additive_jumps(simulate_path(model, 1e-3, FixedTime(1.0), 2, replicate=r), 0.01, 1.0)
                  for r in range(2000)]
        assert within_3se(counts, 10.0)

    def test_additive_counts_below_eps(self, ml_half):
        path = simulate_path(ml_half, 1e-3, FixedTime(1.0), 0)
        with pytest.raises(PreconditionError):
            count_additive_jumps(path, 1e-4)


class TestFunctionals:
    def test_no_jumps(self):
        assert functional_L(manual_path([], [], 2.5), None, 0.5, 2.5) == pytest.approx(2.5)

    def test_one_jump(self):
        path = manual_path([1.0], [0.8], 3.0)
        assert functional_L(path, None, 0.5, 3.0) == pytest.approx(1.0 + 2.0 * math.exp(-0.4))

    def test_power_tail_no_jumps(self):
        # int_0^t (beta (1 + d u)^-(beta+1))^alpha du with drift d
        beta, alpha, d, t = 3.0, 0.5, 1.0, 2.0
        path = manual_path([], [], t, drift=d)
        from scipy import integrate
        ref = integrate.quad(lambda u: (beta * (1 + d * u) ** -(beta + 1)) ** alpha, 0, t)[0]
        assert functional_L(path, Diffeomorphism.power_tail(beta), alpha, t) == pytest.approx(ref, rel=1e-12)

    def test_mean_of_L(self):
        model = LevyModel.two_parameter(0.5, 1.0)
        vals = [functional_L(simulate_path(model, 1e-5, MultiplicativeRemainder(1e-6), 8, replicate=r),
                             None, 0.5) for r in range(2000)]
        assert within_3se(vals, 1.0 / laplace_exponent(model, 0.5))

    def test_tail_correction(self, half_atom):
        path = simulate_path(half_atom, 0.0, MultiplicativeRemainder(1e-3), seed=0)
        assert tail_correction(path, 1.0) == pytest.approx(math.exp(-path.S_end) / 0.5)

    def test_infinite_needs_exponential(self, half_atom):
        path = simulate_path(half_atom, 0.0, FixedTime(1.0), 0)
        with pytest.raises(PreconditionError):
            functional_L(path, Diffeomorphism.power_tail(2.0), 0.5, math.inf)

    def test_area(self, half_atom):
        assert area_process(manual_path([], [], 1.0), 0.0) == 0.0
        vals = [area_process(simulate_path(half_atom, 0.0, FixedTime(1.0), 4, replicate=r), 1.0) for r in range(3000)]
        assert within_3se(vals, (1 - math.exp(-0.5)) / 0.5)
        full = [area_process(simulate_path(half_atom, 0.0, MultiplicativeRemainder(1e-9), 4, replicate=r))
                for r in range(3000)]
        assert within_3se(full, 2.0)

    def test_lebesgue_of_range(self):
        assert lebesgue_of_range(manual_path([0.5], [1.0], 1.0)) == 0.0
        model = LevyModel.finite_atomic([(0.5, 1e-9)], drift=1.0)
        path = SubordinatorPath(np.array([]), np.array([]), 1.0, 60.0, 0.0, model)
        assert lebesgue_of_range(path) == pytest.approx(1.0, abs=1e-12)

    def test_lebesgue_of_range_geometry(self):
        # drift 1, one jump J at t1: range image is [0, 1 - e^-t1] plus [1 - e^-(t1+J), 1)
        t1, J = 0.7, 0.9
        path = SubordinatorPath(np.array([t1]), np.array([J]), 1.0, 80.0, 0.0, LevyModel.finite_atomic([(0.5, 1e-12)]))
        expected = (1 - math.exp(-t1)) + math.exp(-(t1 + J))
        assert lebesgue_of_range(path) == pytest.approx(expected, abs=1e-12)


class TestCompensator:
    def test_zero_time(self, half_atom):
        path = simulate_path(half_atom, 0.0, FixedTime(1.0), 0)
        assert compensator(path, 5.0, 0.0) == 0.0

    def test_no_jumps(self, half_atom):
        path = manual_path([], [], 2.0, model=half_atom)
        assert compensator(path, 3.0, 2.0) == pytest.approx(2.0 * poissonized_laplace(half_atom, 3.0))

    def test_piecewise(self, half_atom):
        path = manual_path([1.0], [LOG2], 3.0, model=half_atom)
        expected = poissonized_laplace(half_atom, 4.0) + 2.0 * poissonized_laplace(half_atom, 2.0)
        assert compensator(path, 4.0, 3.0) == pytest.approx(expected)


class TestFirstPassage:
    def test_examples(self):
        path = manual_path([0.3, 0.8], [LOG2, LOG2], 1.0)
        assert first_passage(path, None, 0.0) == 0.0
        assert first_passage(path, None, 0.6) == pytest.approx(0.8)
        assert first_passage(path, None, 0.9) is None

    def test_drift_crossing(self):
        path = SubordinatorPath(np.array([]), np.array([]), 2.0, 10.0, 0.0, None)
        assert first_passage(path, None, 0.5) == pytest.approx(LOG2 / 2)


def test_path_csv():
    buf = io.StringIO()
    write_path_csv(manual_path([0.3, 0.8], [LOG2, LOG2], 1.0), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "epoch,jump_additive,S_after,gap_left,gap_right"
    assert len(lines) == 3
    assert lines[2].split(",")[3:] == ["0.5", "0.75"]


def test_drift_free_total_length_matches_laplace():
    model = LevyModel.two_parameter(0.3, 0.0)
    assert laplace_exponent_total(model, 1.0) == laplace_exponent(model, 1.0)
