from collections import Counter
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigsurvey.design import (AllocationPlan, BigDataMechanism, StratifiedFrame,
                              allocate_optimal, bigdata_select, enumerated_stratum_ratio,
                              infer_stratum_samples, neyman_allocate, single_draw_probabilities,
                              srswor, srswor_membership, stratified_srswor, stream)
from bigsurvey.exceptions import DomainError


def with_sd(values, sd):
    v = np.asarray(values, float)
    v = (v - v.mean()) / v.std(ddof=1)
    return v * sd


class TestStreams:
    def test_reproducible(self):
        a = stream(7, 3, "survey").random(5)
        b = stream(7, 3, "survey").random(5)
        np.testing.assert_array_equal(a, b)

    def test_distinct_keys(self):
        base = stream(7, 3, "survey").random(5)
        for other in (stream(7, 4, "survey"), stream(8, 3, "survey"), stream(7, 3, "bigdata")):
            assert not np.array_equal(base, other.random(5))


class TestSrswor:
    def test_edge_sizes(self, rng):
        np.testing.assert_array_equal(srswor(5, 5, rng), np.arange(5))
        assert srswor(5, 0, rng).size == 0
        with pytest.raises(DomainError):
            srswor(3, 4, rng)

    def test_membership_probabilities(self):
        m = srswor_membership(6, [1, 4, 5])
        np.testing.assert_allclose(m.pi, 0.5)
        assert m.pi2(1, 4) == pytest.approx(3 * 2 / (6 * 5))
        assert m.pi2(2, 2) == 0.5

    @pytest.mark.slow
    def test_subset_frequencies(self):
        rng = stream(11, 0, "srswor-enum")
        R = 1_000_000
        counts = Counter(tuple(srswor(6, 3, rng)) for _ in range(R))
        subsets = list(combinations(range(6), 3))
        assert set(counts) == set(subsets)
        p = 1 / 20
        se = np.sqrt(p * (1 - p) / R)
        for s in subsets:
            assert abs(counts[s] / R - p) <= 4 * se
        incl = np.zeros(6)
        for s, c in counts.items():
            incl[list(s)] += c
        np.testing.assert_allclose(incl / R, 0.5, atol=0.005)


class TestNeyman:
    def test_example(self):
        y = np.r_[with_sd(np.arange(100), 1.0), with_sd(np.arange(100) ** 1.5, 3.0)]
        frame = StratifiedFrame.from_labels(np.repeat([0, 1], 100))
        plan = neyman_allocate(frame, y, 8)
        np.testing.assert_array_equal(plan.n, [2, 6])

    def test_equal_sd_is_proportional(self):
        sizes = [100, 300, 600]
        y = np.concatenate([with_sd(np.arange(n), 2.0) for n in sizes])
        frame = StratifiedFrame.from_labels(np.repeat([0, 1, 2], sizes))
        np.testing.assert_array_equal(neyman_allocate(frame, y, 50).n, [5, 15, 30])

    def test_single_stratum(self, rng):
        frame = StratifiedFrame.from_labels(np.zeros(40, int))
        assert neyman_allocate(frame, rng.normal(size=40), 13).n.tolist() == [13]

    def test_infeasible(self, rng):
        frame = StratifiedFrame.from_labels(np.repeat([0, 1], 10))
        with pytest.raises(DomainError):
            neyman_allocate(frame, rng.normal(size=20), 3)
        with pytest.raises(DomainError):
            neyman_allocate(frame, rng.normal(size=20), 21)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(2, 60), st.floats(0.0, 50.0)), min_size=1, max_size=6),
           st.data())
    def test_sum_and_bounds(self, strata, data):
        sizes = [n for n, _ in strata]
        y = np.concatenate([with_sd(np.arange(n), sd) if sd > 0 else np.zeros(n)
                            for n, sd in strata])
        frame = StratifiedFrame.from_labels(np.repeat(np.arange(len(sizes)), sizes))
        n_total = data.draw(st.integers(2 * len(sizes), sum(sizes)))
        plan = neyman_allocate(frame, y, n_total)
        assert plan.n.sum() == n_total
        assert np.all(plan.n >= 2) and np.all(plan.n <= np.array(sizes))


class TestStratifiedSrswor:
    def frame(self):
        return StratifiedFrame.from_labels(np.repeat([0, 1], [6, 8]))

    def test_no_exclusion_is_per_stratum_srswor(self):
        frame = self.frame()
        plan = AllocationPlan.from_sizes([2, 3], frame.sizes)
        draw = stratified_srswor(frame, plan, stream(1, 0, "t"))
        rng = stream(1, 0, "t")
        expected = np.r_[frame.members[0][srswor(6, 2, rng)], frame.members[1][srswor(8, 3, rng)]]
        np.testing.assert_array_equal(draw.index, np.sort(expected))
        np.testing.assert_allclose(draw.membership.pi, np.r_[np.full(6, 2 / 6), np.full(8, 3 / 8)])

    def test_forced_sample(self):
        frame = self.frame()
        plan = AllocationPlan.from_sizes([2, 3], frame.sizes)
        exclude = np.r_[[0, 1, 2, 3], [6, 7, 8, 9, 10]]
        for seed in range(5):
            idx, m = stratified_srswor(frame, plan, stream(seed), exclude=exclude)
            np.testing.assert_array_equal(idx, [4, 5, 11, 12, 13])
            assert np.all(np.isnan(m.pi[exclude]))

    def test_exhausted(self):
        frame = self.frame()
        plan = AllocationPlan.from_sizes([2, 3], frame.sizes)
        with pytest.raises(DomainError):
            stratified_srswor(frame, plan, stream(0), exclude=[0, 1, 2, 3, 4])

    def test_joint_probabilities(self):
        frame = self.frame()
        plan = AllocationPlan.from_sizes([2, 3], frame.sizes)
        m = stratified_srswor(frame, plan, stream(0), exclude=[0, 6]).membership
        # stratum sizes after exclusion: 5 and 7
        assert m.pi2(1, 2) == pytest.approx(2 * 1 / (5 * 4))
        assert m.pi2(7, 8) == pytest.approx(3 * 2 / (7 * 6))
        assert m.pi2(1, 8) == pytest.approx((2 / 5) * (3 / 7))
        assert m.pi2(3, 3) == pytest.approx(2 / 5)

    @pytest.mark.slow
    def test_inclusion_frequencies(self):
        frame = self.frame()
        plan = AllocationPlan.from_sizes([2, 3], frame.sizes)
        exclude = np.array([0, 7, 8])
        rng = stream(5, 0, "incl")
        R = 100_000
        counts = np.zeros(14)
        for _ in range(R):
            counts[stratified_srswor(frame, plan, rng, exclude=exclude).index] += 1
        freq = counts / R
        keep = np.setdiff1d(np.arange(14), exclude)
        expected = np.where(keep < 6, 2 / 5, 3 / 6)
        np.testing.assert_allclose(freq[keep], expected, atol=0.005)
        assert np.all(freq[exclude] == 0)

    def test_stratum_samples_and_inference(self):
        frame = self.frame()
        plan = AllocationPlan.from_sizes([2, 3], frame.sizes)
        y = np.arange(14.0)
        delta = np.zeros(14, int)
        draw = stratified_srswor(frame, plan, stream(3))
        direct = draw.stratum_samples(y, delta)
        inferred = infer_stratum_samples(y, np.repeat([0, 1], [6, 8]), draw.membership.alpha,
                                         draw.membership.pi, delta)
        for a, b in zip(direct, inferred):
            np.testing.assert_array_equal(a.values, b.values)
            assert a.frame_size == b.frame_size


class TestBigData:
    def test_uniform_when_rates_equal(self):
        mech = BigDataMechanism(threshold=0.0, low_rate=1.0, target_size=3)
        rng = stream(2, 0, "bd")
        y = np.array([-5.0, -1.0, 0.5, 2.0, 9.0, -3.0])
        freq = np.mean([bigdata_select(y, mech, rng) for _ in range(40_000)], axis=0)
        np.testing.assert_allclose(freq, 0.5, atol=0.01)

    def test_single_draw_probabilities(self):
        y = np.array([20000.0, 30000.0, 40000.0, 1.0, 2.0, 3.0, 4.0])
        mech = BigDataMechanism(threshold=18200, low_rate=0.05, target_size=1)
        p = single_draw_probabilities(y, mech)
        np.testing.assert_allclose(p[:3], 1 / 3.2)
        np.testing.assert_allclose(p[3:], 0.05 / 3.2)
        rng = stream(3, 0, "bd1")
        freq = np.mean([bigdata_select(y, mech, rng) for _ in range(100_000)], axis=0)
        np.testing.assert_allclose(freq, p, atol=0.005)

    def test_threshold_below_min(self):
        y = np.arange(10.0) + 100
        mech = BigDataMechanism(threshold=0.0, low_rate=0.05)
        rng = stream(4, 0, "bd2")
        freq = np.mean([bigdata_select(y, mech, rng) for _ in range(20_000)], axis=0)
        np.testing.assert_allclose(freq, 0.5, atol=0.015)

    def test_size_and_errors(self, rng):
        y = rng.exponential(20000, 101)
        assert bigdata_select(y, BigDataMechanism(), rng).sum() == 50
        with pytest.raises(DomainError):
            bigdata_select(y, BigDataMechanism(target_size=200), rng)
        with pytest.raises(DomainError):
            BigDataMechanism(low_rate=0.0)

    def test_over_represents_high(self):
        rng = stream(9, 0, "bd3")
        y = rng.exponential(20000, 200)
        high = y >= 18200
        share = np.mean([high[bigdata_select(y, BigDataMechanism(), rng).astype(bool)].mean()
                         for _ in range(10_000)])
        assert share > high.mean()

    def test_reproducible(self):
        y = np.linspace(0, 50000, 300)
        a = bigdata_select(y, BigDataMechanism(), stream(1, 2, "b"))
        b = bigdata_select(y, BigDataMechanism(), stream(1, 2, "b"))
        np.testing.assert_array_equal(a, b)


class TestEnumeratedRatio:
    def test_examples(self):
        for f in (0.01, 0.3, 0.9):
            assert enumerated_stratum_ratio(1.0, f) == pytest.approx(1.0)
        assert enumerated_stratum_ratio(0.8, 0.1) == pytest.approx(0.6, rel=1e-12)
        assert enumerated_stratum_ratio(0.8, 0.64) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("F2,f", [(0.8, 0.0), (0.8, 1.0), (0.0, 0.1), (1.2, 0.1), (0.5, 0.3)])
    def test_domain(self, F2, f):
        with pytest.raises(DomainError):
            enumerated_stratum_ratio(F2, f)


class TestAllocateOptimal:
    @staticmethod
    def srs_var(F, S):
        F, S = np.asarray(F, float), np.asarray(S, float)
        return lambda f: float(np.sum(F * (1 - f) / f * S ** 2))

    def test_symmetric(self):
        F = [0.25] * 4
        plan = allocate_optimal(self.srs_var(F, [2.0] * 4), 0.2, (0.01, 1.0), F=F)
        np.testing.assert_allclose(plan.f, 0.2, atol=1e-6)

    def test_matches_grid_search(self):
        F = np.array([0.3, 0.7])
        S = np.array([5.0, 1.5])
        fun = self.srs_var(F, S)
        plan = allocate_optimal(fun, 0.1, (0.01, 1.0), F=F)
        grid = np.arange(0.01, 1.0 + 1e-12, 1e-3)
        f2 = (0.1 - F[0] * grid) / F[1]
        ok = (f2 >= 0.01) & (f2 <= 1.0)
        vals = [fun(np.array([a, b])) for a, b in zip(grid[ok], f2[ok])]
        best = grid[ok][int(np.argmin(vals))]
        assert abs(plan.f[0] - best) <= 1e-3
        assert plan.variance <= min(vals) + 1e-12
        # Neyman: f_h proportional to S_h
        assert plan.f[0] / plan.f[1] == pytest.approx(S[0] / S[1], rel=1e-4)

    def test_zero_dispersion_gets_lower_bound(self):
        F = np.array([0.5, 0.5])
        plan = allocate_optimal(self.srs_var(F, [0.0, 2.0]), 0.3, (0.02, 1.0), F=F)
        assert plan.f[0] == pytest.approx(0.02, abs=1e-6)
        assert plan.f[1] == pytest.approx(0.58, abs=1e-6)

    def test_plain_sum_constraint(self):
        fun = lambda f: float(np.sum((f - [0.1, 0.4]) ** 2))  # noqa: E731
        plan = allocate_optimal(fun, 0.5, (np.zeros(2), np.ones(2)))
        np.testing.assert_allclose(plan.f, [0.1, 0.4], atol=1e-6)
        with pytest.raises(DomainError):
            allocate_optimal(fun, 0.5, (0.0, 1.0))

    def test_infeasible(self):
        with pytest.raises(DomainError):
            allocate_optimal(lambda f: 0.0, 2.5, (0.0, 1.0), F=[0.5, 0.5])

    def test_census(self):
        F = [0.4, 0.6]
        plan = allocate_optimal(self.srs_var(F, [1.0, 1.0]), 1.0, (0.01, 1.0), F=F)
        np.testing.assert_allclose(plan.f, 1.0)
        assert plan.variance == 0.0
