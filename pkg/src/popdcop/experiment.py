"""Experiment harness: run instance x algorithm x seed grids and summarise them."""

from __future__ import annotations

import csv
import json
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .aed import AedParams, aed_factory
from .baselines import DsaParams, DsanParams, dsa_factory, dsan_factory
from .benchgen import GenSpec, generate
from .dpsa import DpsaParams, dpsa_factory
from .engine import Engine, RunTrace
from .model import DcopInstance, evaluate_global_cost, load_instance

__all__ = [
    "AlgorithmConfig",
    "ExperimentConfig",
    "RunResult",
    "make_factory",
    "expand_beta_sweep",
    "run_single",
    "run_experiment",
    "write_trace",
    "read_traces",
    "read_finals",
    "relative_solution_cost",
    "ci99",
    "welch_pvalue",
    "aggregate",
    "Summary",
    "mean_curves",
]

Z99 = 2.576
TRACE_HEADER = ["instance", "algorithm", "seed", "iteration", "anytime_cost"]
FINAL_HEADER = ["instance", "algorithm", "seed", "final_cost"]
SUMMARY_HEADER = ["instance", "algorithm", "mean_final", "ci99_lo", "ci99_hi", "rs"]


class AnytimeViolation(RuntimeError):
    """An anytime trace went up, which means an algorithm bug."""


@dataclass(frozen=True)
class AlgorithmConfig:
    """``algorithm`` is one of ``aed``, ``dpsa``, ``dsa_c``, ``dsan``; ``name`` labels the output."""

    name: str
    algorithm: str
    params: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "AlgorithmConfig":
        doc = dict(doc)
        algorithm = doc.pop("algorithm")
        name = doc.pop("name", algorithm)
        params = dict(doc.pop("params", {}))
        params.update(doc)
        return cls(name, algorithm, params)


def expand_beta_sweep(alg: AlgorithmConfig) -> list[AlgorithmConfig]:
    """An AED entry with ``beta_sweep`` (a list of betas, or ``true`` for 1..12) becomes one config per beta."""
    params = dict(alg.params)
    sweep = params.pop("beta_sweep", None)
    if sweep is None or sweep is False:
        return [alg]
    if alg.algorithm != "aed":
        raise ValueError("beta_sweep only applies to aed")
    betas = list(range(1, 13)) if sweep is True else list(sweep)
    return [AlgorithmConfig(f"{alg.name}_b{b}", alg.algorithm, {**params, "beta": b}) for b in betas]


ALGORITHM_PRESETS: dict[str, AlgorithmConfig] = {
    "AED": AlgorithmConfig("AED", "aed"),
    "DPSA_CE": AlgorithmConfig("DPSA_CE", "dpsa"),
    "DPSA_GB": AlgorithmConfig("DPSA_GB", "dpsa", {"gb": {"enabled": True}}),
    "DSA-C": AlgorithmConfig("DSA-C", "dsa_c"),
    "DSAN": AlgorithmConfig("DSAN", "dsan"),
}


def make_factory(alg: AlgorithmConfig, iterations: int) -> Callable:
    p = dict(alg.params)
    if alg.algorithm == "aed":
        return aed_factory(AedParams.from_dict({**p, "iterations": iterations}))
    if alg.algorithm == "dpsa":
        return dpsa_factory(DpsaParams.from_dict({**p, "total_iterations": iterations}))
    if alg.algorithm == "dsa_c":
        return dsa_factory(
            DsaParams(
                p=p.get("p", 0.8),
                parallel_instances=p.get("parallel_instances", 10),
                total_iterations=iterations,
            )
        )
    if alg.algorithm == "dsan":
        return dsan_factory(
            DsanParams(
                parallel_instances=p.get("parallel_instances", 10),
                total_iterations=iterations,
                max_iteration=p.get("max_iteration"),
            )
        )
    raise ValueError(f"unknown algorithm {alg.algorithm!r}")


@dataclass
class ExperimentConfig:
    instances: list[Any]
    algorithms: list[AlgorithmConfig]
    seeds: list[int]
    iterations: int
    output_dir: Path = Path("results")
    stride: int = 1
    time_limit: float | None = None

    def __post_init__(self):
        if not self.instances or not self.algorithms or not self.seeds:
            raise ValueError("need at least one instance, algorithm and seed")
        if self.iterations < 1:
            raise ValueError("iteration budget must be at least 1")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base: Path | None = None) -> "ExperimentConfig":
        seeds = doc.get("seeds", 1)
        seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
        algorithms = []
        for a in doc["algorithms"]:
            if isinstance(a, str):
                algorithms.append(ALGORITHM_PRESETS[a])
            else:
                algorithms.extend(expand_beta_sweep(AlgorithmConfig.from_dict(a)))
        instances = []
        for inst in doc["instances"]:
            if isinstance(inst, str):
                path = Path(inst)
                instances.append(path if base is None or path.is_absolute() else base / path)
            else:
                instances.append(dict(inst))
        out = Path(doc.get("output_dir", "results"))
        if base is not None and not out.is_absolute():
            out = base / out
        limit = doc.get("time_limit")
        return cls(
            instances, algorithms, seeds, int(doc["iterations"]), out, int(doc.get("stride", 1)),
            None if limit is None else float(limit),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix in {".yaml", ".yml"}:
            import yaml

            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
        return cls.from_dict(doc, base=path.parent)

    def resolve_instances(self) -> list[tuple[str, DcopInstance]]:
        out = []
        for k, inst in enumerate(self.instances):
            if isinstance(inst, DcopInstance):
                out.append((inst.meta.get("id", f"inst{k}"), inst))
            elif isinstance(inst, dict):
                doc = dict(inst)
                name = doc.pop("id", None)
                spec = GenSpec.from_dict(doc)
                out.append((name or f"{spec.family}-{spec.seed}", generate(spec)))
            else:
                out.append((Path(inst).stem, load_instance(inst)))
        return out


@dataclass
class RunResult:
    instance: str
    algorithm: str
    seed: int
    series: list[tuple[int, int]]
    final_cost: int
    assignment: np.ndarray
    trace: RunTrace


def _per_iteration(series: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    last: dict[int, int] = {}
    for it, cost in series:
        last[it] = cost
    return sorted(last.items())


def run_single(
    instance: DcopInstance,
    alg: AlgorithmConfig,
    seed: int,
    iterations: int,
    instance_id: str = "instance",
    observer=None,
    time_limit: float | None = None,
) -> RunResult:
    """One seeded run; ``time_limit`` (seconds) switches to wall-clock mode.

    In wall-clock mode the run may stop before the iteration budget is used
    up and the result is no longer reproducible across machines.
    """
    engine = Engine(instance, make_factory(alg, iterations), seed)
    budget = 4 * iterations + 100 * (engine.height + 4)
    deadline = None if time_limit is None else time.monotonic() + time_limit
    trace = engine.run(budget, observer, deadline)
    if not engine.done() and deadline is None:
        raise RuntimeError(f"{alg.name} did not finish within {budget} barriers")
    series = _per_iteration(trace.anytime_series())
    for (_, a), (it, b) in zip(series, series[1:]):
        if b > a:
            raise AnytimeViolation(f"{alg.name} cost rose from {a} to {b} at iteration {it}")
    assignment = engine.assignment()
    return RunResult(
        instance_id, alg.name, seed, series, evaluate_global_cost(instance, assignment),
        assignment, trace,
    )


def write_trace(result: RunResult, path: Path, stride: int = 1) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        n = len(result.series)
        for k, (it, cost) in enumerate(result.series):
            if k % stride == 0 or k == n - 1:
                w.writerow([result.instance, result.algorithm, result.seed, it, cost])


def run_experiment(config: ExperimentConfig, progress: Callable[[str], None] | None = None) -> list[RunResult]:
    """Run the full grid and persist one trace file per run plus ``finals.csv``."""
    out = Path(config.output_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    results = []
    for inst_id, instance in config.resolve_instances():
        for alg in config.algorithms:
            for seed in config.seeds:
                res = run_single(
                    instance, alg, seed, config.iterations, inst_id, time_limit=config.time_limit
                )
                write_trace(res, out / "traces" / f"{inst_id}__{alg.name}__{seed}.csv", config.stride)
                results.append(res)
                if progress is not None:
                    progress(f"{inst_id} {alg.name} seed={seed} final={res.final_cost}")
    with open(out / "finals.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FINAL_HEADER)
        for r in results:
            w.writerow([r.instance, r.algorithm, r.seed, r.final_cost])
    return results


def read_traces(directory: str | Path) -> dict[tuple[str, str, int], list[tuple[int, int]]]:
    """Trace files of a run directory keyed by ``(instance, algorithm, seed)``."""
    directory = Path(directory)
    files = sorted((directory / "traces").glob("*.csv")) or sorted(directory.glob("*.csv"))
    out: dict[tuple[str, str, int], list[tuple[int, int]]] = {}
    for path in files:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != set(TRACE_HEADER):
            continue
        for row in rows:
            key = (row["instance"], row["algorithm"], int(row["seed"]))
            out.setdefault(key, []).append((int(row["iteration"]), int(row["anytime_cost"])))
    return out


def read_finals(directory: str | Path) -> dict[tuple[str, str, int], int]:
    path = Path(directory) / "finals.csv"
    if path.exists():
        with open(path, newline="", encoding="utf-8") as fh:
            return {
                (r["instance"], r["algorithm"], int(r["seed"])): int(r["final_cost"])
                for r in csv.DictReader(fh)
            }
    # fall back to the last anytime cost of every trace
    return {k: s[-1][1] for k, s in read_traces(directory).items() if s}


# -- statistics ------------------------------------------------------------------


def relative_solution_cost(costs: Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    """``costs[algorithm][instance]`` to RS per algorithm, averaged over instances.

    On each instance the cheapest algorithm scores 100 and the others
    ``100 * best / cost``.
    """
    algs = list(costs)
    instances = sorted({i for a in algs for i in costs[a]})
    rs: dict[str, list[float]] = {a: [] for a in algs}
    for inst in instances:
        vals = {a: float(costs[a][inst]) for a in algs}
        if any(v <= 0 for v in vals.values()):
            raise ValueError(f"relative cost needs positive costs (instance {inst})")
        best = min(vals.values())
        for a, v in vals.items():
            rs[a].append(100.0 * best / v)
    return {a: float(np.mean(v)) for a, v in rs.items()}


def ci99(sample: Sequence[float]) -> tuple[float, float, float]:
    """Mean and normal-approximation 99% interval; zero width for a single sample."""
    x = np.asarray(sample, dtype=np.float64)
    m = float(x.mean())
    if len(x) < 2:
        return m, m, m
    half = Z99 * float(x.std(ddof=1)) / math.sqrt(len(x))
    return m, m - half, m + half


def welch_pvalue(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided Welch t-test p-value, with the zero-variance cases made explicit."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.var() == 0 and b.var() == 0:
        return 1.0 if a.mean() == b.mean() else 0.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


@dataclass
class Summary:
    rows: list[dict[str, Any]]
    rs: dict[str, float]
    pvalues: dict[tuple[str, str], float]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for r in self.rows:
                w.writerow([r[k] if not isinstance(r[k], float) else f"{r[k]:.6f}" for k in SUMMARY_HEADER])


def aggregate(finals: Mapping[tuple[str, str, int], float], rs_mode: str = "per_instance") -> Summary:
    """Per-(instance, algorithm) means with 99% intervals, RS and pairwise Welch p-values.

    RS rows are computed from the per-instance mean costs. With
    ``rs_mode="per_instance"`` the overall RS averages those rows; with
    ``"pooled"`` it is the RS of each algorithm's mean cost over all
    instances. p-values compare all final costs of two algorithms pooled
    over instances.
    """
    if rs_mode not in ("per_instance", "pooled"):
        raise ValueError(f"unknown rs_mode {rs_mode!r}")
    grouped: dict[tuple[str, str], list[float]] = defaultdict(list)
    for (inst, alg, _seed), cost in sorted(finals.items()):
        grouped[(inst, alg)].append(cost)
    algs = sorted({a for _, a in grouped})
    instances = sorted({i for i, _ in grouped})
    means = {k: ci99(v) for k, v in grouped.items()}
    rows = []
    for inst in instances:
        present = [a for a in algs if (inst, a) in means]
        best = min(means[(inst, a)][0] for a in present)
        for a in present:
            m, lo, hi = means[(inst, a)]
            rs = 100.0 if m == best else (100.0 * best / m if m > 0 else 0.0)
            rows.append(
                {"instance": inst, "algorithm": a, "mean_final": m, "ci99_lo": lo, "ci99_hi": hi, "rs": rs}
            )
    pooled = {a: [c for (i, b), v in grouped.items() if b == a for c in v] for a in algs}
    if rs_mode == "per_instance":
        rs_overall = {a: float(np.mean([r["rs"] for r in rows if r["algorithm"] == a])) for a in algs}
    else:
        pooled_means = {a: float(np.mean(pooled[a])) for a in algs}
        best_mean = min(pooled_means.values())
        rs_overall = {a: 100.0 * best_mean / m if m > 0 else 100.0 for a, m in pooled_means.items()}
    pvalues = {
        (a, b): welch_pvalue(pooled[a], pooled[b]) for k, a in enumerate(algs) for b in algs[k + 1 :]
    }
    return Summary(rows, rs_overall, pvalues)


def mean_curves(
    traces: Mapping[tuple[str, str, int], Sequence[tuple[int, int]]],
) -> dict[str, list[tuple[int, float, float, float]]]:
    """Per-algorithm ``(iteration, mean, ci99_lo, ci99_hi)`` over all runs.

    Each run's series is carried forward between reported iterations and
    only iterations every run has reached are included.
    """
    by_alg: dict[str, list[dict[int, int]]] = defaultdict(list)
    for (_inst, alg, _seed), series in sorted(traces.items()):
        by_alg[alg].append(dict(series))
    out = {}
    for alg, runs in by_alg.items():
        first = max(min(r) for r in runs)
        last = min(max(r) for r in runs)
        filled = []
        for r in runs:
            cur, col = None, []
            for it in range(min(r), last + 1):
                cur = r.get(it, cur)
                if it >= first:
                    col.append(cur)
            filled.append(col)
        mat = np.array(filled, dtype=np.float64)
        out[alg] = [
            (first + k, *ci99(mat[:, k])) for k in range(mat.shape[1])
        ]
    return out
