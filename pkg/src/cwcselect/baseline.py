"""Outsourced CWC over encrypted bits.

The whole dataset is encrypted bitwise; pair-difference strings and capped
popcounts are computed gate by gate; features are sorted by a Batcher
odd-even merge network whose compare-exchange is an encrypted comparison
followed by an oblivious swap of the entire payload (index, count and
bit string); selection runs over suffix cumulative ORs; the output is a
shuffled array of masked indices.  Nothing is decrypted until the end, so
run time (in gates) depends only on the shape (k, n*m, b_max).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Sequence

from .dataset import Dataset
from .bitcircuit import (
    BitBackend,
    EncBit,
    EncInt,
    GateStats,
    PhaseRecorder,
    less_than,
    logical_or,
    make_backend,
    oblivious_swap,
    saturating_popcount,
)


def default_b_max(nm: int) -> int:
    """Smallest width that stores counts up to nm exactly: ceil(log2(nm+1))."""
    return max(1, int(nm).bit_length())


def index_width(k: int) -> int:
    """Bits needed for 1-based feature indices: ceil(log2(k+1))."""
    return max(1, int(k).bit_length())


# --- sorting network ---------------------------------------------------------


@dataclass(frozen=True)
class ComparatorSchedule:
    """Batcher odd-even mergesort comparators for k inputs.

    ``comparators`` is the full network on the next power of two; positions
    >= input_count hold sentinel payloads during the oblivious sort.
    ``pruned`` drops every comparator touching a sentinel wire; because the
    sentinels sort above all real keys, the pruned network still sorts the
    first input_count wires and is what the handle-moving protocol executes.
    """

    input_count: int
    padded_count: int
    comparators: tuple[tuple[int, int], ...]
    pruned: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "pruned",
            tuple(
                (i, j)
                for i, j in self.comparators
                if i < self.input_count and j < self.input_count
            ),
        )


def _merge(lo: int, n: int, r: int, out: list) -> None:
    step = r * 2
    if step < n:
        _merge(lo, n, step, out)
        _merge(lo + r, n, step, out)
        for i in range(lo + r, lo + n - r, step):
            out.append((i, i + r))
    else:
        out.append((lo, lo + r))


def _network(lo: int, n: int, out: list) -> None:
    if n > 1:
        half = n // 2
        _network(lo, half, out)
        _network(lo + half, half, out)
        _merge(lo, n, 1, out)


def batcher_schedule(k: int) -> ComparatorSchedule:
    if k < 1:
        raise ValueError("k must be >= 1")
    padded = 1 << (k - 1).bit_length()
    comparators: list[tuple[int, int]] = []
    if padded > 1:
        _network(0, padded, comparators)
    return ComparatorSchedule(k, padded, tuple(comparators))


def batcher_network_size(padded: int) -> int:
    """Closed-form comparator count for a power-of-two input size."""
    if padded <= 1:
        return 0
    p = padded.bit_length() - 1
    if p == 1:
        return 1
    return ((p * p - p + 4) << (p - 2)) - 1


# --- encrypted pipeline -------------------------------------------------------


@dataclass(frozen=True)
class EncRow:
    features: tuple[EncBit, ...]
    dummy: EncBit


@dataclass(frozen=True)
class EncRows:
    positives: tuple[EncRow, ...]
    negatives: tuple[EncRow, ...]
    k: int


@dataclass(frozen=True)
class EncFeaturePayload:
    """The unit the network shuffles: encrypted index, count and bit string."""

    index: EncInt
    bits: tuple[EncBit, ...]
    count: EncInt | None = None


def encrypt_dataset(d: Dataset, backend) -> EncRows:
    """Encrypt every feature bit and dummy flag; class grouping stays public."""

    def enc_row(row) -> EncRow:
        return EncRow(
            tuple(backend.encrypt_bit(b) for b in row.features),
            backend.encrypt_bit(row.dummy),
        )

    return EncRows(
        tuple(enc_row(r) for r in d.positives()),
        tuple(enc_row(r) for r in d.negatives()),
        d.k,
    )


def enc_bitstrings(enc: EncRows, backend) -> list[EncFeaturePayload]:
    """Per feature, the encrypted pair-difference string over all (p, q) pairs:
    (x_p XOR y_q) OR dummy_p OR dummy_q."""
    w = index_width(enc.k)
    payloads = []
    for i in range(enc.k):
        bits = []
        for xp in enc.positives:
            for yq in enc.negatives:
                diff = backend.xor(xp.features[i], yq.features[i])
                bits.append(logical_or(logical_or(diff, xp.dummy), yq.dummy))
        payloads.append(EncFeaturePayload(backend.encrypt_int(i + 1, w), tuple(bits)))
    return payloads


def enc_counts(
    payloads: Sequence[EncFeaturePayload], b_max: int, backend
) -> list[EncFeaturePayload]:
    out = []
    for p in payloads:
        if p.bits:
            count = saturating_popcount(p.bits, b_max)
        else:
            count = backend.encrypt_int(0, b_max)
        out.append(replace(p, count=count))
    return out


def _composite_key(payload: EncFeaturePayload, flag: EncBit, zero: EncBit) -> EncInt:
    """count-major / index-minor sort key with a sentinel bit on top.

    Plain bit concatenation, no gates: value = flag*2^(w+b) + count*2^w + index.
    The spare zero MSB keeps both operands of less_than below 2^(l-1); the
    sentinel bit dominates even a saturated count tied with a maximal index.
    """
    return EncInt((*payload.index.bits, *payload.count.bits, flag, zero))


def oblivious_sort(
    payloads: Sequence[EncFeaturePayload],
    schedule: ComparatorSchedule,
    backend,
    b_max: int,
) -> list[EncFeaturePayload]:
    """Run every comparator of the padded network over encrypted payloads.

    Sentinel entries (maximal key, flagged) fill the array up to the padded
    size and sink to the tail; the first k outputs are the real payloads in
    non-decreasing (count, index) order.
    """
    if len(payloads) != schedule.input_count:
        raise ValueError("payload count does not match schedule")
    k = schedule.input_count
    nm = len(payloads[0].bits) if payloads else 0
    w = index_width(k)

    items: list[tuple[EncBit, EncFeaturePayload]] = [
        (backend.encrypt_bit(0), p) for p in payloads
    ]
    max_count = backend.encrypt_int((1 << b_max) - 1, b_max)
    for _ in range(schedule.padded_count - k):
        sentinel = EncFeaturePayload(
            backend.encrypt_int(0, w),
            tuple(backend.encrypt_bit(0) for _ in range(nm)),
            max_count,
        )
        items.append((backend.encrypt_bit(1), sentinel))

    zero = backend.encrypt_bit(0)
    for i, j in schedule.comparators:
        flag_i, pi = items[i]
        flag_j, pj = items[j]
        swap = less_than(
            _composite_key(pj, flag_j, zero), _composite_key(pi, flag_i, zero)
        )
        (fi, ii, ci, bi), (fj, ij, cj, bj) = oblivious_swap(
            swap,
            (flag_i, pi.index, pi.count, list(pi.bits)),
            (flag_j, pj.index, pj.count, list(pj.bits)),
        )
        items[i] = (fi, EncFeaturePayload(ii, tuple(bi), ci))
        items[j] = (fj, EncFeaturePayload(ij, tuple(bj), cj))

    return [p for _, p in items[:k]]


@dataclass
class SelectionState:
    """Z: suffix cumulative ORs (k+1 vectors, last all-zero); R: kept flag per
    sorted position; S: running OR of kept bit strings; P: masked index output."""

    suffix_or: list[list[EncBit]]
    kept: list[EncBit]
    coverage: list[EncBit]
    output: list[EncInt] | None = None


def select_features(payloads: Sequence[EncFeaturePayload], backend) -> SelectionState:
    """Greedy pass over sorted payloads, entirely under encryption.

    Position i is dropped iff every pair is still covered by the already-kept
    strings together with everything after i:
        R[i] = NOT AND_h (Z_{i+1}[h] OR S[h]),  S[h] |= R[i] AND B_i[h].
    """
    k = len(payloads)
    nm = len(payloads[0].bits) if payloads else 0

    suffix = [[backend.encrypt_bit(0) for _ in range(nm)]]
    for p in reversed(payloads):
        prev = suffix[0]
        suffix.insert(0, [logical_or(b, z) for b, z in zip(p.bits, prev)])

    coverage = [backend.encrypt_bit(0) for _ in range(nm)]
    kept = []
    for i, p in enumerate(payloads):
        acc = backend.encrypt_bit(1)
        for h in range(nm):
            acc = backend.and_(acc, logical_or(suffix[i + 1][h], coverage[h]))
        r = backend.not_(acc)
        kept.append(r)
        coverage = [
            logical_or(s, backend.and_(r, b)) for s, b in zip(coverage, p.bits)
        ]
    return SelectionState(suffix, kept, coverage)


def output_indices(
    state: SelectionState,
    payloads: Sequence[EncFeaturePayload],
    shuffle_seed: int,
    backend,
) -> list[EncInt]:
    """P[h] = kept ? index : 0, then shuffled so ranks are not revealed."""
    zero = backend.encrypt_bit(0)
    out = []
    for r, p in zip(state.kept, payloads):
        out.append(EncInt(tuple(backend.mux(r, b, zero) for b in p.index.bits)))
    random.Random(shuffle_seed).shuffle(out)
    state.output = out
    return out


@dataclass(frozen=True)
class BaselineResult:
    selected: tuple[int, ...]
    output_values: tuple[int, ...]    # decrypted P, zeros included
    counts: tuple[int, ...]           # decrypted capped counts, original order
    b_max: int
    schedule: ComparatorSchedule
    step_stats: dict
    total_stats: GateStats

    def paper_steps(self) -> dict:
        """Aggregate to the three classic cost steps: build strings / sort / select."""
        return {
            "step1": self.step_stats["bitstrings"],
            "step2": self.step_stats["counts"] + self.step_stats["sort"],
            "step3": self.step_stats["select"] + self.step_stats["output"],
        }


def run_baseline(
    d: Dataset,
    b_max: int | None = None,
    seed: int = 0,
    backend: BitBackend | None = None,
) -> BaselineResult:
    """Full encrypted pipeline on one backend, with per-step gate accounting.

    The caller plays both the data owner (encrypt, final decrypt) and the
    compute party; see the protocol module for the genuinely two-party flow.
    """
    if backend is None:
        backend = make_backend(seed=seed)
    nm = d.n * d.m
    if b_max is None:
        b_max = default_b_max(nm)
    if b_max < 1:
        raise ValueError("b_max must be >= 1")

    rec = PhaseRecorder(backend)
    enc = encrypt_dataset(d, backend)
    rec.record("encrypt")
    payloads = enc_bitstrings(enc, backend)
    rec.record("bitstrings")
    payloads = enc_counts(payloads, b_max, backend)
    rec.record("counts")
    schedule = batcher_schedule(d.k) if d.k else ComparatorSchedule(0, 0, ())
    sorted_payloads = (
        oblivious_sort(payloads, schedule, backend, b_max) if d.k else []
    )
    rec.record("sort")
    state = select_features(sorted_payloads, backend)
    rec.record("select")
    output = output_indices(state, sorted_payloads, seed, backend)
    rec.record("output")

    values = tuple(backend.decrypt_int(x) for x in output)
    counts = tuple(backend.decrypt_int(p.count) for p in payloads)
    return BaselineResult(
        selected=tuple(sorted(v for v in values if v)),
        output_values=values,
        counts=counts,
        b_max=b_max,
        schedule=schedule,
        step_stats=dict(rec.phases),
        total_stats=rec.total(),
    )
