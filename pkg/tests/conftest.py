import random

import pytest

from cwcselect.dataset import Dataset, Row, normalize

# the worked 7x4 example: two positives, five negatives, selected set {F1, F3}
TABLE2_ROWS = (
    ((0, 1, 1, 0), 1),
    ((1, 0, 1, 0), 0),
    ((1, 1, 0, 0), 0),
    ((0, 1, 0, 1), 0),
    ((0, 0, 1, 1), 1),
    ((1, 0, 1, 0), 0),
    ((1, 1, 0, 0), 0),
)

TABLE2_B = {
    1: (1, 1, 0, 1, 1, 1, 1, 0, 1, 1),
    2: (1, 0, 0, 1, 0, 0, 1, 1, 0, 1),
    3: (0, 1, 1, 0, 1, 0, 1, 1, 0, 1),
    4: (0, 0, 1, 0, 0, 1, 1, 0, 1, 1),
}

TABLE2_COUNTS = (8, 5, 6, 5)
TABLE2_PI = (2, 4, 3, 1)
TABLE2_SELECTED = (1, 3)

# the 8x5 example with mutual information (0.189, 0.189, 0.049, 0, 0)
TABLE1_ROWS = (
    ((1, 0, 1, 1, 1), 0),
    ((1, 1, 0, 0, 0), 0),
    ((0, 0, 0, 1, 1), 0),
    ((1, 0, 1, 0, 0), 0),
    ((1, 1, 1, 1, 0), 1),
    ((0, 1, 0, 1, 0), 1),
    ((0, 1, 0, 0, 1), 1),
    ((0, 0, 0, 0, 1), 1),
)

TABLE1_MI = (0.189, 0.189, 0.049, 0.000, 0.000)


def make_dataset(rows, k=None) -> Dataset:
    k = k if k is not None else len(rows[0][0])
    return Dataset(tuple(Row(tuple(f), c) for f, c in rows), k)


@pytest.fixture
def table2() -> Dataset:
    return make_dataset(TABLE2_ROWS)


@pytest.fixture
def table1() -> Dataset:
    return make_dataset(TABLE1_ROWS)


def random_normalized_dataset(seed: int, k_max: int = 8, nm_max: int = 48) -> Dataset:
    """Consistent-by-construction random dataset with both classes present.

    Classes are a random function of a random non-empty feature subset, so
    duplicates agree; normalization then removes them, and we resample until
    the shape fits the requested pair budget.
    """
    rng = random.Random(f"testgen:{seed}")
    while True:
        k = rng.randint(1, k_max)
        n_rows = rng.randint(2, 12)
        anchor = rng.sample(range(k), rng.randint(1, k))
        table: dict = {}
        rows = []
        for _ in range(n_rows):
            feats = tuple(rng.randrange(2) for _ in range(k))
            proj = tuple(feats[j] for j in anchor)
            if proj not in table:
                table[proj] = rng.randrange(2)
            rows.append(Row(feats, table[proj]))
        d = normalize(Dataset(tuple(rows), k)).dataset
        if d.n >= 1 and d.m >= 1 and d.n * d.m <= nm_max:
            return d


def write_csv(path, rows, header=("F1", "F2", "F3", "F4", "C")) -> str:
    lines = [",".join(header)]
    for feats, label in rows:
        lines.append(",".join(str(b) for b in (*feats, label)))
    path.write_text("\n".join(lines) + "\n")
    return str(path)
