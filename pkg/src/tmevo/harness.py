"""Benchmark harness: repeated attack trials, aggregates, and significance.

A suite is a list of attack subjects (image plus detector). Every subject is
attacked `repetitions` times per algorithm, each trial with a seed derived
from (base_seed, image index, repetition, algorithm), so a rerun of the same
manifest reproduces every trial exactly. The harness emits report.json
(everything, including wall-clock runtimes) and report.csv (the deterministic
per-trial fields only, so reruns are byte-identical).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations
from math import erfc, sqrt
from pathlib import Path
from statistics import mean, median

from .evolution import MODE_BASELINE, MODE_TM_EVO, SearchConfig, run_attack
from .imaging import save_image

__all__ = [
    "ALGORITHM_INDEX",
    "Subject",
    "TrialReport",
    "run_experiment",
    "trial_seed",
    "wilcoxon_rank_sum",
    "write_report",
]

# stable across runs and mode subsets, feeds the per-trial seed formula
ALGORITHM_INDEX = {MODE_TM_EVO: 0, MODE_BASELINE: 1}

CSV_HEADER = "image_id,algorithm,repetition,seed,success,generations,l0,l2"


def _ranks(values: list[float]) -> list[float]:
    """Ranks with ties averaged."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def wilcoxon_rank_sum(a: list[float], b: list[float]) -> float:
    """Two-sided Wilcoxon rank-sum p-value for independent samples.

    Uses the exact null distribution (enumeration over rank assignments) for
    pooled sizes up to 12, and the normal approximation with tie correction
    beyond that. Two all-identical samples give p = 1.0 in either branch.
    """
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    pooled = list(a) + list(b)
    n = n1 + n2
    ranks = _ranks(pooled)
    w = sum(ranks[:n1])

    if n <= 12:
        count_le = 0
        count_ge = 0
        total = 0
        eps = 1e-9
        for combo in combinations(range(n), n1):
            s = sum(ranks[i] for i in combo)
            total += 1
            if s <= w + eps:
                count_le += 1
            if s >= w - eps:
                count_ge += 1
        p = 2.0 * min(count_le / total, count_ge / total)
        return min(1.0, p)

    # normal approximation, variance reduced for ties
    tie_term = 0.0
    seen: dict[float, int] = {}
    for v in pooled:
        seen[v] = seen.get(v, 0) + 1
    for t in seen.values():
        tie_term += t**3 - t
    var = (n1 * n2 / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return 1.0
    z = (w - n1 * (n + 1) / 2.0) / sqrt(var)
    return min(1.0, erfc(abs(z) / sqrt(2.0)))


@dataclass(frozen=True)
class Subject:
    """One attack subject: an image and the detector that sees it."""

    image_id: str
    image: object       # (H, W, C) array
    detector: object


@dataclass
class TrialReport:
    image_id: str
    algorithm: str
    repetition: int
    seed: int
    success: bool
    generations: int
    l0: int
    l2: float
    runtime_seconds: float
    detector_calls: int
    error: str | None = None

    def to_dict(self) -> dict:
        doc = {
            "image_id": self.image_id,
            "algorithm": self.algorithm,
            "repetition": self.repetition,
            "seed": self.seed,
            "success": self.success,
            "generations": self.generations,
            "l0": self.l0,
            "l2": self.l2,
            "runtime_seconds": self.runtime_seconds,
            "detector_calls": self.detector_calls,
        }
        if self.error is not None:
            doc["error"] = self.error
        return doc


def trial_seed(base_seed: int, image_index: int, repetition: int, algorithm: str) -> int:
    return (
        base_seed * 10000
        + image_index * 100
        + repetition * 10
        + ALGORITHM_INDEX[algorithm]
    )


def _run_trial(subject, image_index, repetition, algorithm, base_cfg, base_seed, out_dir):
    seed = trial_seed(base_seed, image_index, repetition, algorithm)
    cfg = replace(base_cfg, mode=algorithm, rng_seed=seed)
    start = time.perf_counter()
    result = run_attack(subject.image, subject.detector, cfg)
    runtime = time.perf_counter() - start
    if out_dir is not None:
        png_dir = Path(out_dir) / subject.image_id / algorithm
        png_dir.mkdir(parents=True, exist_ok=True)
        save_image(result.image, png_dir / f"{repetition}.png")
    return TrialReport(
        image_id=subject.image_id,
        algorithm=algorithm,
        repetition=repetition,
        seed=seed,
        success=result.success,
        generations=result.generations,
        l0=result.l0,
        l2=result.l2,
        runtime_seconds=runtime,
        detector_calls=result.detector_calls,
        error=result.error,
    )


def _aggregate(trials: list[TrialReport]) -> dict:
    succ = [t for t in trials if t.success]
    agg = {
        "trials": len(trials),
        "success_rate": len(succ) / len(trials),
        "mean_l0": mean(t.l0 for t in trials),
        "mean_l2": mean(t.l2 for t in trials),
        "mean_runtime_seconds": mean(t.runtime_seconds for t in trials),
        "median_generations": median(t.generations for t in trials),
    }
    if succ:
        agg["median_generations_to_success"] = median(t.generations for t in succ)
        agg["mean_l0_success"] = mean(t.l0 for t in succ)
    return agg


def run_experiment(
    subjects: list[Subject],
    base_cfg: SearchConfig,
    algorithms: list[str],
    repetitions: int,
    base_seed: int = 0,
    out_dir: str | Path | None = None,
    save_images: bool = False,
    workers: int = 1,
) -> dict:
    """Run the full trial grid and return the report structure.

    Trials are independent and run concurrently up to `workers`; the report
    order is fixed by (image, algorithm, repetition) regardless of scheduling.
    """
    if not (1 <= repetitions <= 9):
        raise ValueError("repetitions must be between 1 and 9 (seed formula domain)")
    for algorithm in algorithms:
        if algorithm not in ALGORITHM_INDEX:
            raise ValueError(f"unknown algorithm {algorithm!r}")
    png_dir = Path(out_dir) if (out_dir is not None and save_images) else None

    jobs = []
    for image_index, subject in enumerate(subjects):
        for algorithm in algorithms:
            for repetition in range(repetitions):
                jobs.append((subject, image_index, repetition, algorithm))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    _run_trial, subj, idx, rep, algo, base_cfg, base_seed, png_dir
                )
                for subj, idx, rep, algo in jobs
            ]
            trials = [f.result() for f in futures]
    else:
        trials = [
            _run_trial(subj, idx, rep, algo, base_cfg, base_seed, png_dir)
            for subj, idx, rep, algo in jobs
        ]

    by_algo: dict[str, list[TrialReport]] = {a: [] for a in algorithms}
    for t in trials:
        by_algo[t.algorithm].append(t)

    report: dict = {
        "config": base_cfg.to_dict(),
        "base_seed": base_seed,
        "repetitions": repetitions,
        "algorithms": list(algorithms),
        "images": [s.image_id for s in subjects],
        "trials": [t.to_dict() for t in trials],
        "aggregates": {a: _aggregate(by_algo[a]) for a in algorithms},
    }

    if MODE_TM_EVO in by_algo and MODE_BASELINE in by_algo:
        tm, ev = by_algo[MODE_TM_EVO], by_algo[MODE_BASELINE]
        per_image_l0 = {}
        for subject in subjects:
            a = [t.l0 for t in tm if t.image_id == subject.image_id]
            b = [t.l0 for t in ev if t.image_id == subject.image_id]
            per_image_l0[subject.image_id] = wilcoxon_rank_sum(a, b)
        report["comparison"] = {
            "test": "two-sided Wilcoxon rank-sum",
            "l0_p_value": wilcoxon_rank_sum([t.l0 for t in tm], [t.l0 for t in ev]),
            "l2_p_value": wilcoxon_rank_sum([t.l2 for t in tm], [t.l2 for t in ev]),
            "per_image_l0_p_values": per_image_l0,
        }

    return report


def _csv_float(v: float) -> str:
    return format(v, ".6g")


def write_report(report: dict, out_dir: str | Path) -> tuple[Path, Path]:
    """Emit report.json and report.csv. The CSV holds only the deterministic
    per-trial fields and is byte-identical across reruns of the same
    manifest; wall-clock runtimes live in the JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    json_path.write_text(json.dumps(report, indent=2) + "\n")
    lines = [CSV_HEADER]
    for t in report["trials"]:
        lines.append(
            ",".join(
                [
                    t["image_id"],
                    t["algorithm"],
                    str(t["repetition"]),
                    str(t["seed"]),
                    "true" if t["success"] else "false",
                    str(t["generations"]),
                    str(t["l0"]),
                    _csv_float(t["l2"]),
                ]
            )
        )
    csv_path.write_text("\n".join(lines) + "\n")
    return json_path, csv_path
