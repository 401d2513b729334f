"""Time-to-solution estimation, batch campaigns and schedule scans.

Effort is measured in sweeps: an instance solved with mean repetition count
``tau`` at annealing time ``t_a`` costs ``t_a * tau`` sweeps.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import annealers
from .annealers import MfaSchedule, SaSchedule, SqaSchedule
from .instances import CouplingInstance, InvalidParameter
from .rng import stream_key

DEFAULT_QUANTILES = (0.50, 0.75, 0.90, 0.99)
DEFAULT_CAP = 10**6
TTS_FIELDS = ("instance_id", "s", "tau", "repetitions", "successes", "is_upper_bound")


@dataclass(frozen=True)
class TtsRecord:
    instance_id: int
    s: float
    tau: float
    repetitions: int
    successes: float
    is_upper_bound: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def effort(self, t_a: int) -> float:
        return t_a * self.tau


def schedule_tag(schedule) -> str:
    if isinstance(schedule, SaSchedule):
        return f"sa/t_a={schedule.t_a}/beta={schedule.beta_start}-{schedule.beta_end}"
    if isinstance(schedule, SqaSchedule):
        return f"sqa/t_a={schedule.t_a}/beta={schedule.beta}/M={schedule.M}/cap={schedule.jperp_cap}"
    if isinstance(schedule, MfaSchedule):
        return f"mfa/t_a={schedule.t_a}/beta={schedule.beta}/table={schedule.table_size}"
    return getattr(schedule, "tag", type(schedule).__name__)


def make_schedule(algorithm: str, t_a: int, beta: float | None = None, M: int = 32, **extra):
    algorithm = algorithm.lower()
    if algorithm == "sa":
        return SaSchedule(int(t_a), **extra)
    if beta is None:
        raise InvalidParameter(f"{algorithm} needs beta")
    if algorithm == "sqa":
        return SqaSchedule(int(t_a), float(beta), int(M), **extra)
    if algorithm == "mfa":
        return MfaSchedule(int(t_a), float(beta), **extra)
    raise InvalidParameter(f"unknown algorithm {algorithm!r}")


def _repeat(instance, config, E0, target, cap, base_key):
    if hasattr(config, "repeat_until"):
        return config.repeat_until(instance, E0, target, cap, base_key)
    return annealers.repeat_until(instance, config, E0, target, cap, base_key)


def estimate_tau(
    instance: CouplingInstance,
    config,
    E0: int,
    target_successes: float = 100,
    cap: int = DEFAULT_CAP,
    *,
    base_key: int = 0,
) -> TtsRecord:
    """Repeat annealing runs until ``target_successes`` ground states were
    accumulated (SQA contributes slice fractions) or ``cap`` runs were spent."""
    if cap < target_successes:
        raise InvalidParameter(f"cap {cap} is below target_successes {target_successes}")
    reps, succ = _repeat(instance, config, int(E0), float(target_successes), int(cap), base_key)
    reps = int(reps)
    if succ <= 0:
        s = 1.0 / cap
        return TtsRecord(instance.id, s, 1.0 / s, reps, 0.0, True)
    s = succ / reps
    return TtsRecord(instance.id, s, 1.0 / s, reps, float(succ), False)


def batch_tts(
    instances: Sequence[CouplingInstance],
    config,
    ground_energies: Mapping[int, int],
    *,
    master_seed: int = 0,
    target_successes: float = 100,
    cap: int = DEFAULT_CAP,
    threads: int = 1,
    tag: str | None = None,
) -> list[TtsRecord]:
    """One record per instance, in input order.

    Instance ``i`` draws repetition ``r`` from the stream
    ``(master_seed, tag, instance id, r)``, so results do not depend on
    ``threads``.
    """
    tag = f"tts/{schedule_tag(config)}" if tag is None else tag

    def work(inst: CouplingInstance) -> TtsRecord:
        E0 = ground_energies.get(inst.id)
        if E0 is None:
            return TtsRecord(inst.id, math.nan, math.nan, 0, 0.0, False, "missing ground energy")
        return estimate_tau(inst, config, E0, target_successes, cap,
                            base_key=stream_key(master_seed, tag, inst.id))

    if threads <= 1:
        return [work(inst) for inst in instances]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, instances))


def write_tts_csv(records: Sequence[TtsRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TTS_FIELDS)
        for r in records:
            w.writerow([r.instance_id, repr(float(r.s)), repr(float(r.tau)), r.repetitions,
                        repr(float(r.successes)), int(r.is_upper_bound)])


def read_tts_csv(path) -> list[TtsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TtsRecord(int(r["instance_id"]), float(r["s"]), float(r["tau"]), int(r["repetitions"]),
                  float(r["successes"]), bool(int(r["is_upper_bound"])))
        for r in rows
    ]


# -- quantiles and scans ---------------------------------------------------------


def _rank(q: float, n: int) -> int:
    # smallest rank r with r / n >= q, immune to q * n landing just above an integer
    return math.ceil(round(q * n, 9))


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    n = len(sorted_values)
    if n == 0:
        raise InvalidParameter("empty sample")
    rank = min(max(_rank(q, n), 1), n)
    return float(sorted_values[rank - 1])


def quantile_table(values, quantiles=DEFAULT_QUANTILES) -> dict[float, float]:
    x = np.sort(np.asarray(values, dtype=float))
    return {q: nearest_rank(x, q) for q in quantiles}


def bootstrap_ci(values, quantiles=DEFAULT_QUANTILES, n_boot=1000, seed=0, level=0.95):
    """Percentile bootstrap intervals of nearest-rank quantiles."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    rng = np.random.default_rng(seed)
    qs = np.array(quantiles)
    ranks = np.clip([_rank(q, n) for q in qs], 1, n) - 1
    boot = np.empty((n_boot, len(qs)))
    for b in range(n_boot):
        boot[b] = np.sort(x[rng.integers(0, n, n)])[ranks]
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    out = {}
    for j, q in enumerate(quantiles):
        col = np.sort(boot[:, j])
        out[q] = (nearest_rank(col, lo_q), nearest_rank(col, hi_q))
    return out


@dataclass
class ScanPoint:
    value: float
    t_a: int
    quantiles: dict[float, float]
    ci: dict[float, tuple[float, float]]
    efforts: list[float] = field(repr=False)


@dataclass
class ScanResult:
    axis: str
    grid: list[float]
    quantile_levels: tuple[float, ...]
    points: list[ScanPoint]
    optimum: float
    per_quantile_optimum: dict[float, float]
    records: dict = field(default_factory=dict, repr=False)

    @property
    def quantiles_disagree(self) -> bool:
        return len(set(self.per_quantile_optimum.values())) > 1

    def to_json(self) -> dict:
        return {
            "axis": self.axis,
            "grid": list(self.grid),
            "quantile_levels": list(self.quantile_levels),
            "optimum": self.optimum,
            "per_quantile_optimum": {str(q): v for q, v in self.per_quantile_optimum.items()},
            "quantiles_disagree": self.quantiles_disagree,
            "points": [
                {
                    "value": p.value,
                    "t_a": p.t_a,
                    "quantiles": {str(q): v for q, v in p.quantiles.items()},
                    "ci": {str(q): list(v) for q, v in p.ci.items()},
                    "efforts": p.efforts,
                }
                for p in self.points
            ],
        }


def _scan_summary(axis, grid, quantiles, efforts_by_value, t_a_by_value, n_boot, seed):
    points = []
    for idx, value in enumerate(grid):
        eff = efforts_by_value[idx]
        table = quantile_table(eff, quantiles)
        ci = bootstrap_ci(eff, quantiles, n_boot, seed=stream_key(seed, f"bootstrap/{axis}", idx))
        points.append(ScanPoint(value, t_a_by_value[idx], table, ci, list(map(float, eff))))
    per_q = {}
    for q in quantiles:
        best = min(range(len(grid)), key=lambda i: points[i].quantiles[q])
        per_q[q] = grid[best]
    median_q = 0.5 if 0.5 in quantiles else quantiles[0]
    return points, per_q[median_q], per_q


def scan_annealing_time(
    instances: Sequence[CouplingInstance],
    family: Callable[[int], object],
    t_a_grid: Sequence[int],
    ground_energies: Mapping[int, int],
    *,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    n_boot: int = 1000,
    master_seed: int = 0,
    target_successes: float = 100,
    cap: int = DEFAULT_CAP,
    threads: int = 1,
) -> ScanResult:
    """Quantiles of ``t_a * tau`` over instances for every ``t_a`` in the grid;
    the optimum minimises the median effort."""
    grid = [int(t) for t in t_a_grid]
    if not grid:
        raise InvalidParameter("empty t_a grid")
    if grid != sorted(grid):
        raise InvalidParameter("t_a grid must be sorted ascending")
    quantiles = tuple(quantiles)
    efforts, records = [], {}
    for t_a in grid:
        recs = batch_tts(instances, family(t_a), ground_energies, master_seed=master_seed,
                         target_successes=target_successes, cap=cap, threads=threads)
        records[t_a] = recs
        efforts.append([r.effort(t_a) for r in recs if r.ok])
    points, opt, per_q = _scan_summary("t_a", grid, quantiles, efforts, grid, n_boot, master_seed)
    return ScanResult("t_a", grid, quantiles, points, opt, per_q, records)


def scan_beta(
    instances: Sequence[CouplingInstance],
    family: Callable[[int, float], object],
    beta_grid: Sequence[float],
    t_a_grid: Sequence[int],
    ground_energies: Mapping[int, int],
    *,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    n_boot: int = 1000,
    master_seed: int = 0,
    target_successes: float = 100,
    cap: int = DEFAULT_CAP,
    threads: int = 1,
) -> ScanResult:
    """Effort quantiles over ``beta``, each at its own optimal annealing time.

    ``family(t_a, beta)`` builds the annealer configuration.
    """
    grid = [float(b) for b in beta_grid]
    if not grid:
        raise InvalidParameter("empty beta grid")
    if grid != sorted(grid):
        raise InvalidParameter("beta grid must be sorted ascending")
    quantiles = tuple(quantiles)
    efforts, t_opts, inner = [], [], {}
    for beta in grid:
        scan = scan_annealing_time(
            instances, lambda t_a, b=beta: family(t_a, b), t_a_grid, ground_energies,
            quantiles=quantiles, n_boot=n_boot, master_seed=master_seed,
            target_successes=target_successes, cap=cap, threads=threads,
        )
        t_opt = int(scan.optimum)
        inner[beta] = scan
        t_opts.append(t_opt)
        efforts.append(scan.points[scan.grid.index(t_opt)].efforts)
    points, opt, per_q = _scan_summary("beta", grid, quantiles, efforts, t_opts, n_boot, master_seed)
    return ScanResult("beta", grid, quantiles, points, opt, per_q, inner)


# -- data products -----------------------------------------------------------------


def running_mean(taus) -> np.ndarray:
    x = np.asarray(taus, dtype=float)
    if x.size == 0:
        raise InvalidParameter("running mean of an empty sequence")
    return np.cumsum(x) / np.arange(1, x.size + 1)


@dataclass
class CorrelationResult:
    rows: list[tuple[int, float, float, float, float]]
    n_s_increase: int
    n_effort_decrease: int

    @property
    def n(self) -> int:
        return len(self.rows)


def correlation_pairs(
    records_a: Sequence[TtsRecord],
    records_b: Sequence[TtsRecord],
    t_a_a: int = 1,
    t_a_b: int = 1,
) -> CorrelationResult:
    """Join two record sets by instance id.

    Rows are ``(instance_id, tau_a, tau_b, effort_a, effort_b)``; the counts
    are instances with ``s_b > s_a`` and with ``effort_b < effort_a``.
    """
    a = {r.instance_id: r for r in records_a}
    b = {r.instance_id: r for r in records_b}
    unmatched = sorted(set(a) ^ set(b))
    if unmatched:
        raise InvalidParameter(f"unmatched instance ids: {unmatched}")
    rows, n_s, n_e = [], 0, 0
    for iid in sorted(a):
        ra, rb = a[iid], b[iid]
        ea, eb = ra.effort(t_a_a), rb.effort(t_a_b)
        rows.append((iid, ra.tau, rb.tau, ea, eb))
        n_s += rb.s > ra.s
        n_e += eb < ea
    return CorrelationResult(rows, n_s, n_e)


def record_dict(record: TtsRecord) -> dict:
    return asdict(record)
