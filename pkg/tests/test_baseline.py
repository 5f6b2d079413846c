import itertools
import random

import pytest

from cwcselect.baseline import (
    EncFeaturePayload,
    batcher_network_size,
    batcher_schedule,
    default_b_max,
    enc_bitstrings,
    enc_counts,
    encrypt_dataset,
    index_width,
    oblivious_sort,
    output_indices,
    run_baseline,
    select_features,
)
from cwcselect.bitcircuit import GateStats, make_backend
from cwcselect.cwc import compute_bitstring, cwc_select, minimal_consistent_subsets
from cwcselect.dataset import Dataset, Row

from conftest import (
    TABLE2_B,
    TABLE2_COUNTS,
    TABLE2_PI,
    TABLE2_SELECTED,
    random_normalized_dataset,
)


def apply_network(comparators, values):
    out = list(values)
    for i, j in comparators:
        if out[j] < out[i]:
            out[i], out[j] = out[j], out[i]
    return out


class TestBatcherSchedule:
    def test_paper_table_counts(self):
        # padded power-of-two network sizes match the published swap counts
        for k, want in ((10, 63), (50, 543), (100, 1471)):
            assert len(batcher_schedule(k).comparators) == want

    def test_closed_form(self):
        for p in range(0, 9):
            n = 1 << p
            schedule = batcher_schedule(n)
            assert len(schedule.comparators) == batcher_network_size(n)

    def test_k1_has_no_comparators(self):
        schedule = batcher_schedule(1)
        assert schedule.comparators == () and schedule.pruned == ()

    def test_padded_network_sorts_all_01_inputs(self):
        for n in (2, 4, 8, 16):
            comps = batcher_schedule(n).comparators
            for bits in itertools.product((0, 1), repeat=n):
                assert apply_network(comps, bits) == sorted(bits)

    def test_pruned_network_sorts_all_01_inputs(self):
        for k in range(1, 13):
            pruned = batcher_schedule(k).pruned
            for bits in itertools.product((0, 1), repeat=k):
                assert apply_network(pruned, bits) == sorted(bits)

    def test_comparators_are_ordered_pairs_in_range(self):
        s = batcher_schedule(10)
        assert all(0 <= i < j < s.padded_count for i, j in s.comparators)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            batcher_schedule(0)


class TestEncryptDataset:
    def test_dims_and_roundtrip(self, table2):
        be = make_backend(seed=4)
        enc = encrypt_dataset(table2, be)
        assert len(enc.positives) + len(enc.negatives) == 7
        assert all(len(r.features) == 4 for r in enc.positives + enc.negatives)
        got_pos = [
            tuple(be.decrypt_bit(b) for b in r.features) for r in enc.positives
        ]
        assert got_pos == [r.features for r in table2.positives()]
        assert all(be.decrypt_bit(r.dummy) == 0 for r in enc.positives)

    def test_empty_dataset(self):
        be = make_backend()
        enc = encrypt_dataset(Dataset((), 3), be)
        assert enc.positives == () and enc.negatives == ()


class TestEncBitstrings:
    def test_table2_vectors(self, table2):
        be = make_backend(seed=4)
        payloads = enc_bitstrings(encrypt_dataset(table2, be), be)
        for i, payload in enumerate(payloads, start=1):
            assert tuple(be.decrypt_bit(b) for b in payload.bits) == TABLE2_B[i]
            assert be.decrypt_int(payload.index) == i

    def test_all_dummy_rows_give_all_ones(self):
        be = make_backend()
        d = Dataset(
            (Row((0, 1), 1, dummy=1), Row((0, 1), 0, dummy=1), Row((1, 1), 0, dummy=1)),
            2,
        )
        payloads = enc_bitstrings(encrypt_dataset(d, be), be)
        for payload in payloads:
            assert all(be.decrypt_bit(b) == 1 for b in payload.bits)

    def test_random_matches_plaintext(self):
        for seed in range(12):
            d = random_normalized_dataset(seed, k_max=6, nm_max=36)
            be = make_backend(seed=seed)
            payloads = enc_bitstrings(encrypt_dataset(d, be), be)
            for i, payload in enumerate(payloads, start=1):
                want = compute_bitstring(d, i).bits
                assert tuple(be.decrypt_bit(b) for b in payload.bits) == want


class TestEncCounts:
    def test_table2(self, table2):
        be = make_backend(seed=4)
        payloads = enc_counts(enc_bitstrings(encrypt_dataset(table2, be), be), 4, be)
        assert tuple(be.decrypt_int(p.count) for p in payloads) == TABLE2_COUNTS

    def test_saturated(self, table2):
        be = make_backend(seed=4)
        payloads = enc_counts(enc_bitstrings(encrypt_dataset(table2, be), be), 2, be)
        # B1 holds 8 ones, capped at 2^2 - 1
        assert be.decrypt_int(payloads[0].count) == 3

    def test_random_min_cap(self):
        for seed in range(8):
            d = random_normalized_dataset(seed, k_max=5, nm_max=30)
            be = make_backend(seed=seed)
            b_max = random.Random(seed).randrange(1, 5)
            payloads = enc_counts(enc_bitstrings(encrypt_dataset(d, be), be), b_max, be)
            for i, p in enumerate(payloads, start=1):
                want = min(compute_bitstring(d, i).count, (1 << b_max) - 1)
                assert be.decrypt_int(p.count) == want


def make_payloads(be, counts, b_max, nm=4, bits=None, indices=None):
    w = index_width(len(counts))
    indices = indices or range(1, len(counts) + 1)
    payloads = []
    for slot, (i, c) in enumerate(zip(indices, counts)):
        raw = bits[slot] if bits else tuple(random.Random(i).randrange(2) for _ in range(nm))
        payloads.append(
            EncFeaturePayload(
                be.encrypt_int(i, w),
                tuple(be.encrypt_bit(b) for b in raw),
                be.encrypt_int(c, b_max),
            )
        )
    return payloads


class TestObliviousSort:
    def test_table2_order_with_tie(self, table2):
        be = make_backend(seed=5)
        payloads = enc_counts(enc_bitstrings(encrypt_dataset(table2, be), be), 4, be)
        ordered = oblivious_sort(payloads, batcher_schedule(4), be, 4)
        assert tuple(be.decrypt_int(p.index) for p in ordered) == TABLE2_PI

    def test_already_sorted_unchanged(self):
        be = make_backend()
        payloads = make_payloads(be, [1, 2, 3, 4], b_max=3)
        ordered = oblivious_sort(payloads, batcher_schedule(4), be, 3)
        assert [be.decrypt_int(p.index) for p in ordered] == [1, 2, 3, 4]

    def test_bitstrings_travel_with_keys(self):
        be = make_backend()
        raw = [(1, 1, 0, 0), (0, 0, 1, 1)]
        payloads = make_payloads(be, [5, 2], b_max=3, bits=raw)
        ordered = oblivious_sort(payloads, batcher_schedule(2), be, 3)
        assert [be.decrypt_int(p.index) for p in ordered] == [2, 1]
        assert tuple(be.decrypt_bit(b) for b in ordered[0].bits) == raw[1]

    def test_random_matches_stable_sort(self):
        rng = random.Random(13)
        for trial in range(12):
            k = rng.randrange(1, 17)
            b_max = rng.randrange(2, 6)
            counts = [rng.randrange(1 << b_max) for _ in range(k)]
            be = make_backend(seed=trial)
            payloads = make_payloads(be, counts, b_max)
            ordered = oblivious_sort(payloads, batcher_schedule(k), be, b_max)
            got = [be.decrypt_int(p.index) for p in ordered]
            want = sorted(range(1, k + 1), key=lambda i: (counts[i - 1], i))
            assert got == want

    def test_sentinel_never_displaces_saturated_max_index_feature(self):
        # k=7 pads to 8 with one sentinel; index 7 is the largest 3-bit value,
        # and with b_max=1 its count saturates: the sentinel flag bit is what
        # keeps the filler strictly above this payload in key order.
        be = make_backend()
        counts = [1, 1, 1, 1, 1, 1, 1]
        payloads = make_payloads(be, counts, b_max=1)
        ordered = oblivious_sort(payloads, batcher_schedule(7), be, 1)
        assert sorted(be.decrypt_int(p.index) for p in ordered) == [1, 2, 3, 4, 5, 6, 7]

    def test_payload_count_mismatch(self):
        be = make_backend()
        payloads = make_payloads(be, [1, 2], b_max=2)
        with pytest.raises(ValueError):
            oblivious_sort(payloads, batcher_schedule(3), be, 2)


class TestSelectFeatures:
    def sorted_table2_payloads(self, be):
        d_bits = [TABLE2_B[i] for i in TABLE2_PI]
        return make_payloads(
            be,
            [TABLE2_COUNTS[i - 1] for i in TABLE2_PI],
            b_max=4,
            nm=10,
            bits=d_bits,
            indices=TABLE2_PI,
        )

    def test_table2_kept_flags(self):
        be = make_backend()
        payloads = self.sorted_table2_payloads(be)
        state = select_features(payloads, be)
        assert [be.decrypt_bit(r) for r in state.kept] == [0, 0, 1, 1]

    def test_suffix_or_vectors(self):
        be = make_backend()
        payloads = self.sorted_table2_payloads(be)
        state = select_features(payloads, be)
        raw = [TABLE2_B[i] for i in TABLE2_PI]
        for i in range(len(raw) + 1):
            want = [0] * 10
            for bits in raw[i:]:
                want = [w | b for w, b in zip(want, bits)]
            got = [be.decrypt_bit(z) for z in state.suffix_or[i]]
            assert got == want

    def test_single_consistent_feature_kept(self):
        be = make_backend()
        payloads = make_payloads(be, [3], b_max=2, nm=3, bits=[(1, 1, 1)])
        state = select_features(payloads, be)
        assert [be.decrypt_bit(r) for r in state.kept] == [1]

    def test_random_matches_plaintext(self):
        for seed in range(10):
            d = random_normalized_dataset(seed, k_max=6, nm_max=30)
            be = make_backend(seed=seed)
            b_max = default_b_max(d.n * d.m)
            payloads = enc_counts(enc_bitstrings(encrypt_dataset(d, be), be), b_max, be)
            ordered = oblivious_sort(payloads, batcher_schedule(d.k), be, b_max)
            state = select_features(ordered, be)
            plain = cwc_select(d)
            kept_indices = sorted(
                be.decrypt_int(p.index)
                for p, r in zip(ordered, state.kept)
                if be.decrypt_bit(r)
            )
            assert tuple(kept_indices) == plain.selected


class TestOutputIndices:
    def test_table2_multiset(self):
        be = make_backend()
        raw = [TABLE2_B[i] for i in TABLE2_PI]
        payloads = make_payloads(
            be,
            [TABLE2_COUNTS[i - 1] for i in TABLE2_PI],
            b_max=4,
            nm=10,
            bits=raw,
            indices=TABLE2_PI,
        )
        state = select_features(payloads, be)
        out = output_indices(state, payloads, shuffle_seed=3, backend=be)
        values = [be.decrypt_int(x) for x in out]
        assert sorted(v for v in values if v) == [1, 3]
        assert values.count(0) == 2

    def test_nothing_removable(self):
        # three features, each the only one distinguishing its pair
        be = make_backend()
        bits = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
        payloads = make_payloads(be, [1, 1, 1], b_max=2, nm=3, bits=bits)
        state = select_features(payloads, be)
        out = output_indices(state, payloads, shuffle_seed=0, backend=be)
        assert sorted(be.decrypt_int(x) for x in out) == [1, 2, 3]


class TestRunBaseline:
    def test_table2(self, table2):
        result = run_baseline(table2, b_max=4, seed=7)
        assert result.selected == TABLE2_SELECTED
        assert result.counts == TABLE2_COUNTS
        assert sorted(v for v in result.output_values if v) == [1, 3]
        assert set(result.step_stats) == {
            "encrypt", "bitstrings", "counts", "sort", "select", "output",
        }

    def test_k1_no_comparators(self):
        d = Dataset((Row((1,), 1), Row((0,), 0)), 1)
        result = run_baseline(d, seed=1)
        assert result.selected == (1,)
        assert len(result.schedule.comparators) == 0
        assert result.step_stats["sort"].mux == 0

    def test_random_equivalence_with_oracle(self):
        for seed in range(25):
            d = random_normalized_dataset(seed)
            result = run_baseline(d, seed=seed)
            plain = cwc_select(d)
            assert result.selected == plain.selected
            assert frozenset(result.selected) in set(minimal_consistent_subsets(d))

    def test_default_b_max_avoids_saturation(self):
        for seed in range(8):
            d = random_normalized_dataset(seed)
            result = run_baseline(d, seed=seed)
            want = tuple(compute_bitstring(d, i).count for i in range(1, d.k + 1))
            assert result.counts == want

    def test_gate_stats_shape_only(self):
        # same (k, nm, b_max), different values: identical per-step stats
        a = random_normalized_dataset(101, k_max=4, nm_max=12)
        rng = random.Random(0)
        flipped = Dataset(
            tuple(
                Row(tuple(b ^ rng.randrange(2) for b in r.features), r.label)
                for r in a.rows
            ),
            a.k,
        )
        assert (a.n, a.m) == (flipped.n, flipped.m)
        ra = run_baseline(a, b_max=3, seed=1)
        rb = run_baseline(flipped, b_max=3, seed=2)
        assert ra.step_stats == rb.step_stats

    def test_sort_gate_formula(self):
        # per comparator: one key comparison + a full payload swap
        for nm_target, b_max in ((100, 7), (200, 8)):
            k = 10
            n, m = 10, nm_target // 10
            be = make_backend()
            payloads = make_payloads(
                be,
                [i % (1 << b_max) for i in range(1, k + 1)],
                b_max=b_max,
                nm=n * m,
            )
            schedule = batcher_schedule(k)
            before = be.stats()
            oblivious_sort(payloads, schedule, be, b_max)
            delta = be.stats() - before
            w = index_width(k)
            key_width = w + b_max + 2
            comps = len(schedule.comparators)
            payload_bits = 1 + w + b_max + n * m
            assert delta == GateStats(
                xor=comps * 5 * key_width,
                and_=comps * 2 * key_width,
                not_=comps * key_width,
                mux=comps * 2 * payload_bits,
            )

    def test_invalid_b_max(self, table2):
        with pytest.raises(ValueError):
            run_baseline(table2, b_max=0)
