import random

import pytest

from cwcselect.cwc import (
    BitString,
    InconsistentDatasetError,
    compute_bitstring,
    consistency_count,
    cwc_select,
    is_consistent,
    minimal_consistent_subsets,
    pair_difference_masks,
    sort_features,
    subset_consistent_bruteforce,
    verify_minimal,
)
from cwcselect.dataset import Dataset, Row, normalize, pad_with_dummies

from conftest import (
    TABLE2_B,
    TABLE2_COUNTS,
    TABLE2_PI,
    TABLE2_SELECTED,
    make_dataset,
    random_normalized_dataset,
)


class TestBitstrings:
    def test_table2_golden_vectors(self, table2):
        for i, want in TABLE2_B.items():
            assert compute_bitstring(table2, i).bits == want

    def test_counts(self, table2):
        got = tuple(consistency_count(compute_bitstring(table2, i)) for i in range(1, 5))
        assert got == TABLE2_COUNTS

    def test_all_zero(self):
        assert consistency_count(BitString((0,) * 10)) == 0

    def test_dummy_pair_bit_forced(self):
        d = Dataset((Row((0,), 1, dummy=1), Row((0,), 0)), 1)
        assert compute_bitstring(d, 1).bits == (1,)

    def test_index_out_of_range(self, table2):
        with pytest.raises(ValueError):
            compute_bitstring(table2, 5)
        with pytest.raises(ValueError):
            compute_bitstring(table2, 0)

    def test_count_invariant_under_class_preserving_row_permutation(self, table2):
        rng = random.Random(3)
        pos = [r for r in table2.rows if r.label == 1]
        neg = [r for r in table2.rows if r.label == 0]
        for _ in range(10):
            rng.shuffle(pos)
            rng.shuffle(neg)
            shuffled = Dataset(tuple(pos + neg), table2.k)
            for i in range(1, 5):
                assert (
                    compute_bitstring(shuffled, i).count
                    == compute_bitstring(table2, i).count
                )


class TestSortFeatures:
    def test_table2(self):
        assert sort_features(TABLE2_COUNTS).pi == TABLE2_PI

    def test_all_equal_is_identity(self):
        assert sort_features((3, 3, 3, 3)).pi == (1, 2, 3, 4)

    def test_strictly_decreasing_reverses(self):
        assert sort_features((9, 7, 5, 3)).pi == (4, 3, 2, 1)


class TestConsistency:
    def test_table2_pair(self, table2):
        strings = [compute_bitstring(table2, i) for i in range(1, 5)]
        assert is_consistent(strings, {1, 3})
        assert not is_consistent(strings, {1})
        assert not is_consistent(strings, set())
        assert is_consistent(strings, {1, 2, 3, 4})

    def test_full_set_consistent_after_normalize(self):
        for seed in range(25):
            d = random_normalized_dataset(seed)
            strings = [compute_bitstring(d, i) for i in range(1, d.k + 1)]
            assert is_consistent(strings, set(range(1, d.k + 1)))
            # independent pair-scan route agrees
            assert subset_consistent_bruteforce(d, set(range(1, d.k + 1)))


class TestSelect:
    def test_table2(self, table2):
        result = cwc_select(table2)
        assert result.selected == TABLE2_SELECTED
        assert result.kept_flags == (0, 0, 1, 1)
        assert result.pi == TABLE2_PI
        assert result.counts == TABLE2_COUNTS

    def test_as_json(self, table2):
        assert cwc_select(table2).as_json() == {
            "selected": [1, 3],
            "pi": [2, 4, 3, 1],
            "counts": [8, 5, 6, 5],
        }

    def test_predictor_identity(self, table2):
        # the selected pair supports the predictor: class == NOT F1 AND F3
        for row in table2.rows:
            assert row.label == ((1 - row.features[0]) & row.features[2])

    def test_single_feature_matching_class(self):
        # feature 1 is the class; the others are constant noise
        d = make_dataset(
            (
                ((1, 0, 1), 1),
                ((0, 0, 1), 0),
                ((1, 0, 1), 1),
                ((0, 0, 1), 0),
            )
        )
        d = normalize(d).dataset
        result = cwc_select(d)
        assert result.selected == (1,)
        assert verify_minimal(d, result.selected)
        assert frozenset(result.selected) in set(minimal_consistent_subsets(d))

    def test_table1_output_is_minimal(self, table1):
        result = cwc_select(table1)
        assert verify_minimal(table1, result.selected)
        assert frozenset(result.selected) in set(minimal_consistent_subsets(table1))

    def test_inconsistent_dataset_raises_with_witness(self):
        d = make_dataset((((1, 0), 1), ((1, 0), 0), ((0, 0), 0)))
        with pytest.raises(InconsistentDatasetError) as err:
            cwc_select(d)
        p, q = err.value.witness
        pos = d.positives()[p - 1]
        neg = d.negatives()[q - 1]
        assert pos.features == neg.features

    def test_deterministic(self, table2):
        assert cwc_select(table2) == cwc_select(table2)

    def test_selection_with_dummies_matches_unpadded(self, table2):
        padded = pad_with_dummies(table2, 4, 7, rng_seed=1)
        assert cwc_select(padded).selected == TABLE2_SELECTED


class TestVerifyMinimal:
    def test_table2_cases(self, table2):
        assert verify_minimal(table2, {1, 3})
        assert not verify_minimal(table2, {1, 2, 3})
        assert not verify_minimal(table2, set())
        assert not verify_minimal(table2, {2})


class TestOracle:
    def test_pair_masks_skip_dummies(self):
        d = Dataset((Row((1,), 1), Row((0,), 0), Row((1,), 0, dummy=1)), 1)
        assert len(pair_difference_masks(d)) == 1

    def test_oracle_agrees_with_bitstring_route(self):
        for seed in range(30):
            d = random_normalized_dataset(seed, k_max=6)
            strings = [compute_bitstring(d, i) for i in range(1, d.k + 1)]
            rng = random.Random(seed)
            for _ in range(8):
                subset = {i for i in range(1, d.k + 1) if rng.randrange(2)}
                assert is_consistent(strings, subset) == subset_consistent_bruteforce(
                    d, subset
                )

    def test_cwc_output_is_oracle_minimal(self):
        for seed in range(40):
            d = random_normalized_dataset(seed)
            result = cwc_select(d)
            assert frozenset(result.selected) in set(minimal_consistent_subsets(d))
            assert verify_minimal(d, result.selected)
