import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zselect.selective import (
    ClassStats,
    DecisionConfig,
    class_stats,
    decide,
    normal_cdf,
    read_score_matrix,
    sr_decide,
    write_score_matrix,
    z_statistic,
    ztest_confidence,
)


def naive_decide(m, z):
    """Pairwise loop with hand-rolled mean and sample std."""
    n, k = len(m), len(m[0])
    means = [sum(row[c] for row in m) / n for c in range(k)]
    stds = [math.sqrt(sum((row[c] - means[c]) ** 2 for row in m) / (n - 1)) for c in range(k)]
    top = 0
    for c in range(1, k):
        if means[c] > means[top]:
            top = c
    zs = []
    for c in range(k):
        if c == top:
            continue
        den = math.sqrt(stds[top] ** 2 / n + stds[c] ** 2 / n)
        num = means[top] - means[c]
        zs.append(num / den if den > 0 else (0.0 if num == 0 else math.inf))
    conf = min(zs)
    return (top if conf >= z else None), top


score_rows = st.integers(2, 12).flatmap(
    lambda n: st.integers(2, 6).flatmap(
        lambda k: arrays(np.float64, (n, k), elements=st.floats(0, 1, allow_nan=False))
    )
)


class TestClassStats:
    def test_hand_example(self):
        s = class_stats([[0.7, 0.3], [0.9, 0.1]])
        np.testing.assert_allclose(s.mean, [0.8, 0.2])
        np.testing.assert_allclose(s.std, [math.sqrt(0.02)] * 2)
        assert s.n == 2

    def test_constant_columns(self):
        s = class_stats(np.tile([0.2, 0.5, 0.3], (7, 1)))
        assert np.all(s.std == 0)

    @given(score_rows, st.randoms())
    def test_row_permutation(self, m, r):
        perm = list(range(len(m)))
        r.shuffle(perm)
        a, b = class_stats(m), class_stats(m[perm])
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-15)
        np.testing.assert_allclose(a.std, b.std, atol=1e-15)

    def test_single_pass_rejected(self):
        with pytest.raises(ValueError, match="two passes"):
            class_stats([[0.5, 0.5]])


class TestZStatistic:
    def test_null_case(self):
        assert z_statistic(0.4, 0.1, 0.4, 0.1, 30, 30) == 0.0

    def test_wide_margin(self):
        assert z_statistic(0.9, 0.1, 0.1, 0.1, 30, 30) == pytest.approx(
            0.8 / math.sqrt(0.02 / 30), rel=1e-12
        )
        assert z_statistic(0.9, 0.1, 0.1, 0.1, 30, 30) == pytest.approx(30.984, abs=5e-4)

    def test_narrow_margin(self):
        assert z_statistic(0.6, 0.2, 0.4, 0.2, 25, 25) == pytest.approx(3.5355, abs=5e-5)

    def test_delta_shifts_numerator(self):
        assert z_statistic(0.6, 0.2, 0.4, 0.2, 25, 25, delta=0.2) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_variance(self):
        assert z_statistic(0.7, 0, 0.3, 0, 5, 5) == math.inf
        assert z_statistic(0.3, 0, 0.7, 0, 5, 5) == -math.inf
        assert z_statistic(0.5, 0, 0.5, 0, 5, 5) == 0.0

    def test_broadcasts(self):
        z = z_statistic(0.9, 0.1, np.array([0.1, 0.9]), np.array([0.1, 0.1]), 30, 30)
        assert z.shape == (2,) and z[1] == 0.0

    @pytest.mark.parametrize("bad", [dict(n1=1), dict(sigma1=-0.1)])
    def test_rejects_bad_inputs(self, bad):
        args = dict(mu1=0.5, sigma1=0.1, mu2=0.4, sigma2=0.1, n1=10, n2=10) | bad
        with pytest.raises(ValueError):
            z_statistic(**args)

    @given(
        st.floats(-1, 1), st.floats(1e-3, 1), st.integers(2, 500),
        st.floats(-1, 1), st.floats(1e-3, 1), st.integers(2, 500),
    )
    def test_antisymmetric(self, m1, s1, n1, m2, s2, n2):
        assert z_statistic(m1, s1, m2, s2, n1, n2) == pytest.approx(
            -z_statistic(m2, s2, m1, s1, n2, n1), rel=1e-12, abs=1e-12
        )


class TestDecide:
    def test_clear_winner(self):
        d = decide(ClassStats(np.array([0.8, 0.1, 0.1]), np.full(3, 0.05), 30))
        assert d.label == 0 and d.accepted
        assert d.confidence == pytest.approx(0.7 / math.sqrt(0.005 / 30), rel=1e-12)
        # 0.7 / sqrt((0.05^2 + 0.05^2) / 30)
        assert d.confidence == pytest.approx(54.2218, abs=5e-4)

    def test_tie_rejects(self):
        d = decide(ClassStats(np.array([0.5, 0.5]), np.array([0.1, 0.1]), 30))
        assert d.label is None and d.predicted == 0 and d.confidence == 0.0

    @given(score_rows)
    def test_zero_threshold_accepts_everything(self, m):
        assert decide(class_stats(m), DecisionConfig(0.0)).accepted

    @given(score_rows, st.floats(0, 10), st.floats(0, 10))
    def test_monotone_in_threshold(self, m, a, b):
        lo, hi = sorted((a, b))
        s = class_stats(m)
        if decide(s, DecisionConfig(hi)).accepted:
            assert decide(s, DecisionConfig(lo)).accepted

    @given(score_rows, st.floats(0.01, 100))
    def test_scale_invariant(self, m, c):
        a, b = ztest_confidence(m), ztest_confidence(m * c)
        assert a[0] == b[0]
        if math.isfinite(a[1]):
            assert b[1] == pytest.approx(a[1], rel=1e-9, abs=1e-9)
        else:
            assert a[1] == b[1]

    def test_matches_pairwise_loop(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            n, k = rng.integers(2, 31), rng.integers(2, 8)
            m = rng.dirichlet(np.ones(k) * 0.5, size=n)
            want = naive_decide(m.tolist(), 1.96)
            got = decide(class_stats(m), DecisionConfig(1.96))
            assert (got.label, got.predicted) == want

    def test_threshold_must_be_finite(self):
        with pytest.raises(ValueError):
            DecisionConfig(math.inf)
        with pytest.raises(ValueError):
            DecisionConfig(-1.0)


class TestSoftmaxResponse:
    def test_accepts_above_threshold(self):
        d = sr_decide([0.7, 0.3], 0.5)
        assert d.label == 0 and d.confidence == pytest.approx(0.7)

    @given(arrays(np.float64, 4, elements=st.floats(0, 1)))
    def test_threshold_one_rejects(self, p):
        assert not sr_decide(p, 1.0).accepted

    @given(arrays(np.float64, 4, elements=st.floats(0, 1)))
    def test_threshold_zero_accepts(self, p):
        assert sr_decide(p, 0.0).accepted

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            sr_decide([0.5, 0.5], 1.5)


class TestNormalCdf:
    def test_centre(self):
        assert normal_cdf(0.0) == 0.5

    @pytest.mark.parametrize("x", [-8.0, -3.3, -1.0, 0.25, 1.959964, 4.0, 7.5])
    def test_against_high_precision(self, x):
        mpmath.mp.dps = 40
        ref = float(mpmath.ncdf(x))
        assert normal_cdf(x) == pytest.approx(ref, rel=1e-13, abs=1e-300)

    def test_two_sided_five_percent(self):
        assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)

    @given(st.floats(-30, 30))
    def test_symmetry(self, x):
        assert abs(normal_cdf(x) + normal_cdf(-x) - 1.0) <= 1e-7


class TestScoreMatrixFile:
    @settings(max_examples=25)
    @given(score_rows)
    def test_roundtrip(self, tmp_path_factory, m):
        path = tmp_path_factory.mktemp("sm") / "m.csv"
        write_score_matrix(m, path)
        np.testing.assert_array_equal(read_score_matrix(path), m)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("3,2\n0.5,0.5\n0.5,0.5\n")
        with pytest.raises(ValueError, match="header"):
            read_score_matrix(path)
