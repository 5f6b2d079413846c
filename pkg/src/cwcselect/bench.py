"""Gate-count benchmark harness over synthetic datasets.

Mirrors the classic three-step cost breakdown (build pair-difference strings /
sort / select) across a (k, n*m) grid, for both the oblivious baseline and the
handle-moving improved pipeline.  Wall-clock numbers are estimated from gate
counters through a configurable cost model, never measured: the simulator's
own speed is irrelevant, the gate counts are exact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .dataset import Dataset, Row
from .bitcircuit import CostModel, GateStats
from .baseline import batcher_schedule, default_b_max, run_baseline
from .mixnet import run_improved

DEFAULT_GRID = ((10, 100), (10, 500), (10, 1000), (50, 100), (50, 500), (50, 1000),
                (100, 100), (100, 500), (100, 1000))
DEFAULT_BUDGET = 10_000


def split_nm(nm: int) -> tuple[int, int]:
    """Factor a pair-count into (n, m) with n the largest divisor <= sqrt."""
    if nm < 1:
        raise ValueError("nm must be >= 1")
    n = 1
    d = 1
    while d * d <= nm:
        if nm % d == 0:
            n = d
        d += 1
    return n, nm // n


def random_shaped_dataset(k: int, n: int, m: int, seed: int) -> Dataset:
    """Exactly n positives and m negatives with pairwise-distinct feature
    vectors, so the dataset is consistent by construction and normalization
    cannot change its shape."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if n + m > (1 << k):
        raise ValueError(f"cannot draw {n + m} distinct vectors of {k} bits")
    rng = random.Random(f"cwcselect:bench:{seed}")
    seen: set[int] = set()
    vectors: list[int] = []
    while len(vectors) < n + m:
        v = rng.getrandbits(k)
        if v not in seen:
            seen.add(v)
            vectors.append(v)
    rows = [
        Row(tuple(v >> j & 1 for j in range(k)), 1 if i < n else 0)
        for i, v in enumerate(vectors)
    ]
    return Dataset(tuple(rows), k)


def split_for_parties(d: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic two-party split: roughly half the rows each."""
    cut = len(d.rows) // 2
    return (
        Dataset(d.rows[:cut], d.k, d.feature_names),
        Dataset(d.rows[cut:], d.k, d.feature_names),
    )


@dataclass(frozen=True)
class BenchConfig:
    grid: tuple[tuple[int, int], ...] = DEFAULT_GRID
    b_max: int | None = None            # None = ceil(log2(nm+1)) per cell
    budget: int = DEFAULT_BUDGET        # simulate a cell only if k*nm <= budget
    seed: int = 0
    cost_model: CostModel = field(default_factory=CostModel.default)

    def __post_init__(self) -> None:
        for k, nm in self.grid:
            if k < 1 or nm < 1:
                raise ValueError("grid entries must be positive")


@dataclass(frozen=True)
class BenchReport:
    cells: tuple[dict, ...]

    def as_json(self) -> dict:
        return {"cells": [dict(c) for c in self.cells]}

    def render_table(self) -> str:
        headers = (
            "k", "mn", "swaps", "sim",
            "step1-gates", "step2-gates", "step3-gates",
            "step1-est[s]", "step2-est[s]", "step3-est[s]",
            "impr-gates", "impr-est[s]",
        )
        rows = [headers]
        for c in self.cells:
            if c["simulated"]:
                base = c["baseline"]
                impr = c["improved"]
                rows.append((
                    str(c["k"]), str(c["nm"]), str(c["comparators"]), "yes",
                    str(base["step1"]["gates"]["total"]),
                    str(base["step2"]["gates"]["total"]),
                    str(base["step3"]["gates"]["total"]),
                    f"{base['step1']['estimated_seconds']:.2f}",
                    f"{base['step2']['estimated_seconds']:.2f}",
                    f"{base['step3']['estimated_seconds']:.2f}",
                    str(impr["gates"]["total"]),
                    f"{impr['estimated_seconds']:.2f}",
                ))
            else:
                rows.append((
                    str(c["k"]), str(c["nm"]), str(c["comparators"]), "no",
                    "-", "-", "-", "-", "-", "-", "-", "-",
                ))
        widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
        lines = []
        for r in rows:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
        return "\n".join(lines)


def _stats_block(stats: GateStats, cost: CostModel) -> dict:
    return {
        "gates": stats.as_dict(),
        "estimated_seconds": round(cost.estimate_seconds(stats), 6),
    }


def run_bench(cfg: BenchConfig) -> BenchReport:
    cells = []
    for k, nm in sorted(set(cfg.grid)):
        n, m = split_nm(nm)
        b_max = cfg.b_max if cfg.b_max is not None else default_b_max(nm)
        schedule = batcher_schedule(k)
        cell: dict = {
            "k": k,
            "nm": nm,
            "n": n,
            "m": m,
            "b_max": b_max,
            "comparators": len(schedule.comparators),
            "comparators_pruned": len(schedule.pruned),
        }
        if k * nm > cfg.budget:
            cell["simulated"] = False
            cell["skip_reason"] = f"k*nm={k * nm} exceeds budget {cfg.budget}"
            cells.append(cell)
            continue

        cell_seed = cfg.seed * 1_000_003 + k * 1009 + nm
        data = random_shaped_dataset(k, n, m, cell_seed)
        base = run_baseline(data, b_max=b_max, seed=cell_seed)
        steps = base.paper_steps()
        da, db = split_for_parties(data, cell_seed)
        impr = run_improved(da, db, b_max=b_max, seed=cell_seed)

        cell["simulated"] = True
        cell["baseline"] = {
            "selected": list(base.selected),
            "step1": _stats_block(steps["step1"], cfg.cost_model),
            "step2": _stats_block(steps["step2"], cfg.cost_model),
            "step3": _stats_block(steps["step3"], cfg.cost_model),
            "total": _stats_block(base.total_stats, cfg.cost_model),
        }
        cell["improved"] = {
            "selected": list(impr.selected),
            "phases": {
                name: _stats_block(stats, cfg.cost_model)
                for name, stats in sorted(impr.phase_stats.items())
            },
            "sort_bitstring_gate_ops": impr.phase_stats["sort"].mux,
            "handle_moves": impr.handle_moves,
            "messages": impr.message_count,
            "message_bytes": impr.message_bytes,
            **_stats_block(impr.total_stats, cfg.cost_model),
        }
        cell["selected_size"] = len(base.selected)
        cell["pipelines_agree"] = list(base.selected) == list(impr.selected)
        cells.append(cell)
    return BenchReport(tuple(cells))
