"""Plaintext consistency-based feature selection (CWC).

For a dataset with n positive and m negative rows, each feature i gets a
length-n*m bit string whose (p,q) entry says whether the feature tells the
p-th positive apart from the q-th negative (pairs touching a dummy row always
count as distinguished).  Features are sorted by how many pairs they
distinguish and greedily dropped, weakest first, whenever the remaining set
still separates every pair.  The survivors are a minimal consistent subset.

A brute-force oracle (direct pair scans plus subset enumeration) lives at the
bottom of the module; it shares no code with the bit-string route and gates
the randomized equivalence tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dataset import Dataset


class InconsistentDatasetError(Exception):
    """The full feature set fails to separate some positive/negative pair."""

    def __init__(self, p: int, q: int):
        self.witness = (p, q)
        super().__init__(
            f"dataset is inconsistent: positive #{p} and negative #{q} agree on "
            f"every feature but differ in class"
        )


@dataclass(frozen=True)
class BitString:
    bits: tuple[int, ...]
    count: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "count", sum(self.bits))


@dataclass(frozen=True)
class SortPermutation:
    """Sorted position -> original 1-based feature index."""

    pi: tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.pi) != list(range(1, len(self.pi) + 1)):
            raise ValueError("pi must be a permutation of 1..k")


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[int, ...]       # ascending original indices
    kept_flags: tuple[int, ...]     # one flag per sorted position
    pi: tuple[int, ...]
    counts: tuple[int, ...]         # per original feature

    def as_json(self) -> dict:
        return {
            "selected": list(self.selected),
            "pi": list(self.pi),
            "counts": list(self.counts),
        }


def compute_bitstring(d: Dataset, i: int) -> BitString:
    """Pair-difference string for 1-based feature i, positives/negatives in row order."""
    if not 1 <= i <= d.k:
        raise ValueError(f"feature index {i} out of range 1..{d.k}")
    pos = d.positives()
    neg = d.negatives()
    bits = []
    for xp in pos:
        for yq in neg:
            bits.append((xp.features[i - 1] ^ yq.features[i - 1]) | xp.dummy | yq.dummy)
    return BitString(tuple(bits))


def consistency_count(b: BitString) -> int:
    return b.count


def sort_features(counts: Sequence[int]) -> SortPermutation:
    """Stable ascending sort of 1-based feature indices by count, ties by index."""
    order = sorted(range(1, len(counts) + 1), key=lambda i: (counts[i - 1], i))
    return SortPermutation(tuple(order))


def is_consistent(bitstrings: Sequence[BitString], subset: Iterable[int]) -> bool:
    """True iff the positionwise OR of the subset's bit strings is all ones."""
    chosen = [bitstrings[i - 1] for i in subset]
    if not bitstrings:
        return True
    length = len(bitstrings[0].bits)
    if not chosen:
        return length == 0
    return all(any(b.bits[h] for b in chosen) for h in range(length))


def cwc_select(d: Dataset) -> SelectionResult:
    """Greedy weakest-first elimination; raises with a witness pair if the
    full feature set is already inconsistent."""
    bitstrings = [compute_bitstring(d, i) for i in range(1, d.k + 1)]
    counts = tuple(b.count for b in bitstrings)

    m = d.m
    if bitstrings and m:
        for h in range(len(bitstrings[0].bits)):
            if not any(b.bits[h] for b in bitstrings):
                raise InconsistentDatasetError(h // m + 1, h % m + 1)

    perm = sort_features(counts)
    current = set(range(1, d.k + 1))
    kept = []
    for f in perm.pi:
        if is_consistent(bitstrings, current - {f}):
            current.discard(f)
            kept.append(0)
        else:
            kept.append(1)
    return SelectionResult(tuple(sorted(current)), tuple(kept), perm.pi, counts)


def verify_minimal(d: Dataset, subset: Iterable[int]) -> bool:
    """True iff ``subset`` is consistent and no drop-one subset is."""
    s = set(subset)
    bitstrings = [compute_bitstring(d, i) for i in range(1, d.k + 1)]
    if not is_consistent(bitstrings, s):
        return False
    return all(not is_consistent(bitstrings, s - {f}) for f in s)


# --- brute-force oracle -----------------------------------------------------
#
# Independent route: scan raw row pairs, represent each positive/negative pair
# by the bitmask of features that differ, and test subsets by set-cover over
# those masks.  No bit strings, no sorting, no greedy pass.


def pair_difference_masks(d: Dataset) -> list[int]:
    """One feature bitmask per non-dummy (positive, negative) row pair."""
    masks = []
    for xp in d.rows:
        if xp.dummy or xp.label != 1:
            continue
        for yq in d.rows:
            if yq.dummy or yq.label != 0:
                continue
            mask = 0
            for j in range(d.k):
                if xp.features[j] != yq.features[j]:
                    mask |= 1 << j
            masks.append(mask)
    return masks


def subset_consistent_bruteforce(d: Dataset, subset: Iterable[int]) -> bool:
    subset_mask = 0
    for i in subset:
        subset_mask |= 1 << (i - 1)
    return all(mask & subset_mask for mask in pair_difference_masks(d))


def minimal_consistent_subsets(d: Dataset) -> list[frozenset[int]]:
    """All minimal consistent subsets, by enumerating the 2^k candidates.

    Only meant for small k; consistency is monotone under adding features, so
    minimality reduces to the drop-one check.
    """
    masks = pair_difference_masks(d)

    def consistent(bits: int) -> bool:
        return all(m & bits for m in masks)

    out = []
    for bits in range(1 << d.k):
        if not consistent(bits):
            continue
        if any(consistent(bits & ~(1 << j)) for j in range(d.k) if bits >> j & 1):
            continue
        out.append(frozenset(j + 1 for j in range(d.k) if bits >> j & 1))
    return out
