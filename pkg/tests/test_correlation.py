"""Rank correlation and subset merit.

The reference implementation below ranks by explicit tie-group scanning
and correlates with the plain product-moment sums, sharing no code with
the module under test.
"""

import numpy as np
import pytest

from flowsel.correlation import (
    CfsScore,
    CorrelationMatrix,
    MeritEvaluator,
    average_ranks,
    cfs_merit,
    export_heatmap,
    ig_sum,
    load_heatmap,
    merit_formula,
    spearman_matrix,
)
from flowsel.errors import DataError


def naive_ranks(values):
    """Fractional ranks by sorting and scanning tie groups."""
    values = list(map(float, values))
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2.0 + 1.0  # mean of 1-based positions i..j
        for pos in range(i, j + 1):
            ranks[order[pos]] = shared
        i = j + 1
    return np.array(ranks)


def naive_spearman(x, y):
    a = naive_ranks(x)
    b = naive_ranks(y)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return 0.0
    return float((a * b).sum() / denom)


class TestAverageRanks:
    def test_distinct_values(self):
        np.testing.assert_array_equal(
            average_ranks([10.0, -3.0, 5.0]), [3.0, 1.0, 2.0]
        )

    def test_ties_share_mean_rank(self):
        # two values tied for ranks 2 and 3
        np.testing.assert_array_equal(
            average_ranks([1.0, 7.0, 7.0, 9.0]), [1.0, 2.5, 2.5, 4.0]
        )

    def test_all_equal(self):
        np.testing.assert_array_equal(average_ranks([4.0] * 5, ), [3.0] * 5)

    def test_matches_naive_on_random_data(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            vals = rng.integers(0, 6, size=n).astype(np.float64)
            np.testing.assert_array_equal(average_ranks(vals), naive_ranks(vals))

    def test_rejects_matrix_input(self):
        with pytest.raises(ValueError):
            average_ranks(np.zeros((2, 2)))


class TestSpearmanMatrix:
    def test_known_value(self):
        """rho([1,2,3],[3,1,2]) = -0.5."""
        m = spearman_matrix(
            np.array([[1.0], [2.0], [3.0]]),
            np.array([[3.0], [1.0], [2.0]]),
            ("f",),
            ("c",),
        )
        np.testing.assert_allclose(m.values[0, 1], -0.5, rtol=0, atol=1e-15)

    def test_matches_naive_oracle(self):
        """Every entry equals rank-then-Pearson computed independently."""
        rng = np.random.default_rng(23)
        for _ in range(60):
            rows = int(rng.integers(3, 30))
            nf = int(rng.integers(1, 6))
            nc = int(rng.integers(1, 4))
            feats = rng.integers(0, 5, size=(rows, nf)).astype(np.float64)
            feats[0] += 0.5  # guarantee no constant column
            cls = rng.integers(0, 2, size=(rows, nc)).astype(np.float64)
            cls[0] = 1.0 - cls[0] if rows > 1 else cls[0]
            m = spearman_matrix(
                feats, cls,
                tuple(f"f{i}" for i in range(nf)),
                tuple(f"c{i}" for i in range(nc)),
            )
            stacked = np.hstack([feats, cls])
            for i in range(stacked.shape[1]):
                for j in range(stacked.shape[1]):
                    want = naive_spearman(stacked[:, i], stacked[:, j])
                    if np.all(stacked[:, i] == stacked[0, i]) or np.all(
                        stacked[:, j] == stacked[0, j]
                    ):
                        want = 0.0
                    if i == j:
                        want = 1.0
                    np.testing.assert_allclose(
                        m.values[i, j], want, rtol=0, atol=1e-12
                    )

    def test_monotone_transform_invariance(self):
        """Spearman only sees ranks, so exp() on a feature changes nothing."""
        rng = np.random.default_rng(7)
        feats = rng.normal(size=(50, 3))
        cls = (rng.random((50, 2)) > 0.5).astype(np.float64)
        cls[0] = [1.0, 0.0]
        cls[1] = [0.0, 1.0]
        names = ("a", "b", "c")
        base = spearman_matrix(feats, cls, names, ("x", "y"))
        warped = feats.copy()
        warped[:, 1] = np.exp(warped[:, 1])
        again = spearman_matrix(warped, cls, names, ("x", "y"))
        np.testing.assert_allclose(base.values, again.values, rtol=0, atol=1e-12)

    def test_symmetry_and_diagonal(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(20, 4))
        cls = np.eye(20)[:, :3][:, :2]
        m = spearman_matrix(feats, cls, ("a", "b", "c", "d"), ("p", "q"))
        np.testing.assert_array_equal(m.values, m.values.T)
        np.testing.assert_array_equal(np.diag(m.values), np.ones(6))

    def test_constant_feature_rejected(self):
        feats = np.column_stack([np.ones(10), np.arange(10.0)])
        cls = np.arange(10.0).reshape(-1, 1) % 2
        with pytest.raises(DataError, match="constant feature"):
            spearman_matrix(feats, cls, ("dead", "live"), ("c",))

    def test_constant_class_column_is_zeroed(self):
        """A class absent from the partition correlates 0 with everything."""
        feats = np.arange(12.0).reshape(6, 2)
        feats[:, 1] = [3, 1, 4, 1, 5, 9]
        cls = np.column_stack([np.zeros(6), [0, 1, 0, 1, 0, 1.0]])
        m = spearman_matrix(feats, cls, ("a", "b"), ("gone", "here"))
        gone = 2  # column index of the absent class
        np.testing.assert_array_equal(m.values[gone, :gone], np.zeros(2))
        np.testing.assert_array_equal(m.values[:gone, gone], np.zeros(2))
        assert m.values[gone, gone] == 1.0

    def test_shape_validation(self):
        with pytest.raises(DataError):
            spearman_matrix(np.zeros((3, 2)), np.zeros((4, 1)), ("a", "b"), ("c",))
        with pytest.raises(DataError):
            spearman_matrix(np.zeros((1, 2)), np.zeros((1, 1)), ("a", "b"), ("c",))


class TestMeritFormula:
    def test_hand_value(self):
        # 2 * 0.5 / sqrt(2 + 2 * 1 * 0.2) = 1 / sqrt(2.4)
        np.testing.assert_allclose(
            merit_formula(2, 0.5, 0.2), 1.0 / np.sqrt(2.4), rtol=0, atol=1e-15
        )

    def test_empty_subset_scores_zero(self):
        assert merit_formula(0, 0.7, 0.3) == 0.0

    def test_singleton_reduces_to_class_correlation(self):
        assert merit_formula(1, 0.42, 0.99) == pytest.approx(0.42, abs=1e-15)

    def test_redundancy_lowers_merit(self):
        assert merit_formula(3, 0.6, 0.8) < merit_formula(3, 0.6, 0.1)


def hand_matrix():
    """A 3-feature, 2-class matrix with easy absolute values."""
    v = np.array(
        [
            [1.0, 0.5, -0.2, 0.8, -0.6],
            [0.5, 1.0, 0.1, 0.4, 0.4],
            [-0.2, 0.1, 1.0, -0.1, 0.3],
            [0.8, 0.4, -0.1, 1.0, 0.0],
            [-0.6, 0.4, 0.3, 0.0, 1.0],
        ]
    )
    return CorrelationMatrix(v, ("a", "b", "c", "x", "y"), 3)


class TestCfsMerit:
    def test_hand_computed_pair(self):
        """Subset {a, b}: r_cf = mean(.8,.6,.4,.4), r_ff = .5."""
        score = cfs_merit(hand_matrix(), [0, 1])
        assert score.k == 2
        np.testing.assert_allclose(score.r_cf, 0.55, rtol=0, atol=1e-15)
        np.testing.assert_allclose(score.r_ff, 0.5, rtol=0, atol=1e-15)
        want = 2 * 0.55 / np.sqrt(2 + 2 * 0.5)
        np.testing.assert_allclose(score.merit, want, rtol=0, atol=1e-15)

    def test_duplicates_and_order_ignored(self):
        a = cfs_merit(hand_matrix(), [1, 0, 1, 0])
        b = cfs_merit(hand_matrix(), [0, 1])
        assert a == b

    def test_empty_subset(self):
        score = cfs_merit(hand_matrix(), [])
        assert score == CfsScore(0.0, 0, 0.0, 0.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError, match="out of feature range"):
            cfs_merit(hand_matrix(), [0, 3])  # 3 is a class column


class TestMeritEvaluator:
    def test_bit_identical_to_cfs_merit(self):
        """The precomputed path must agree with the direct path exactly,
        not just within tolerance, since searches compare merits for
        strict improvement."""
        rng = np.random.default_rng(17)
        feats = rng.normal(size=(40, 8))
        cls = (rng.random((40, 3)) > 0.6).astype(np.float64)
        cls[:3] = np.eye(3)
        m = spearman_matrix(
            feats, cls,
            tuple(f"f{i}" for i in range(8)),
            ("u", "v", "w"),
        )
        ev = MeritEvaluator(m)
        for _ in range(300):
            mask = rng.random(8) < 0.4
            direct = cfs_merit(m, np.flatnonzero(mask)).merit
            assert ev.merit_of_mask(mask) == direct

    def test_counts_evaluations(self):
        ev = MeritEvaluator(hand_matrix())
        for _ in range(5):
            ev.merit_of_mask(np.array([True, False, True]))
        assert ev.evaluations == 5

    def test_rejects_matrix_without_class_columns(self):
        v = np.eye(3)
        with pytest.raises(DataError):
            MeritEvaluator(CorrelationMatrix(v, ("a", "b", "c"), 3))


class TestIgSum:
    def test_sums_selected_mass(self):
        imp = np.array([0.5, 0.25, 0.125, 0.125])
        assert ig_sum(imp, [0, 2]) == pytest.approx(0.625, abs=1e-15)

    def test_requires_unit_total(self):
        with pytest.raises(DataError, match="sum to 1"):
            ig_sum([0.5, 0.4], [0])

    def test_requires_nonnegative(self):
        with pytest.raises(DataError):
            ig_sum([1.2, -0.2], [0])

    def test_index_range(self):
        with pytest.raises(DataError):
            ig_sum([0.5, 0.5], [2])


class TestHeatmapRoundTrip:
    def test_lossless(self, tmp_path):
        """repr-formatted floats reload to the identical matrix."""
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(30, 4))
        cls = (rng.random((30, 2)) > 0.5).astype(np.float64)
        cls[0], cls[1] = [1.0, 0.0], [0.0, 1.0]
        m = spearman_matrix(
            feats, cls, ("a", "b", "c", "d"), ("x", "y")
        )
        path = str(tmp_path / "heat.csv")
        export_heatmap(m, path)
        back = load_heatmap(path)
        np.testing.assert_array_equal(back.values, m.values)
        assert back.names == m.names
        assert back.class_boundary == m.class_boundary

    def test_missing_sidecar(self, tmp_path):
        path = str(tmp_path / "orphan.csv")
        with open(path, "w") as fh:
            fh.write("name,a\n")
        with pytest.raises(DataError, match="sidecar"):
            load_heatmap(path)

    def test_header_disagreement(self, tmp_path):
        path = str(tmp_path / "heat.csv")
        export_heatmap(hand_matrix(), path)
        text = open(path).read().replace("name,a,b,c", "name,z,b,c")
        with open(path, "w") as fh:
            fh.write(text)
        with pytest.raises(DataError, match="header"):
            load_heatmap(path)
