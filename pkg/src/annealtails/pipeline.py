"""Campaign pipeline: generate -> solve -> tts -> scan -> fit-tail -> report.

Every stage reads its inputs from the output directory and writes its
artifacts there, so a run can stop after any stage and be resumed. After
each stage ``manifest.json`` is rewritten with the completed stages, the
config hash and the sha256 of every artifact. Nothing in the bundle depends
on wall-clock time or worker count.

Config schema (YAML)::

    seed: 1                      # master seed, required
    out: runs/demo               # overridden by ANNEALTAILS_OUT or --out
    sizes: [1, 2]                # chimera L values
    instances: 20                # per size
    target_successes: 100
    cap: 1000000
    threads: 1                   # does not affect results
    max_L: 5                     # exact-solver frontier limit
    quantiles: [0.5, 0.75, 0.9, 0.99]
    n_boot: 1000
    algorithms:
      - {name: sa_opt, algorithm: sa, t_a_grid: [5, 10, 20, 50]}
      - {name: sqa_slow, algorithm: sqa, beta: 10, M: 32, t_a: 10000}
      - {name: mfa, algorithm: mfa, beta_grid: [2, 4], t_a_grid: [100, 200]}
    tail:
      k_grid: [30, 50, 100]     # threshold scan
      k: 100                     # fit reported in the summary, with PP/QQ
    correlations:
      - [sqa_slow, sqa_opt]
"""

from __future__ import annotations

import csv
import difflib
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import evt, harness
from .exact import DEFAULT_MAX_L, ResourceLimit, ground_energy
from .instances import MAX_L, build_chimera, generate_instance, read_instance, write_instance
from .rng import stream_key

STAGES = ("generate", "solve", "tts", "scan", "fit-tail", "report")
OUT_ENV = "ANNEALTAILS_OUT"
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


class ConfigMismatch(ConfigError):
    def __init__(self, diff: str):
        super().__init__("config differs from the checkpoint:\n" + diff)
        self.diff = diff


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, completed: list[str]):
        super().__init__(f"stage {stage!r} failed: {cause}; completed stages {completed} "
                         "are checkpointed, rerun with resume")
        self.stage = stage
        self.completed = completed


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    algorithm: str
    t_a: int | None = None
    t_a_grid: tuple[int, ...] | None = None
    beta: float | None = None
    beta_grid: tuple[float, ...] | None = None
    M: int = 32
    table_size: int = 1024

    @property
    def scanned(self) -> bool:
        return self.t_a_grid is not None

    def schedule(self, t_a: int, beta: float | None = None):
        beta = self.beta if beta is None else beta
        extra = {"table_size": self.table_size} if self.algorithm == "mfa" else {}
        return harness.make_schedule(self.algorithm, t_a, beta, self.M, **extra)


@dataclass(frozen=True)
class TailSpec:
    k_grid: tuple[int, ...] = ()
    k: int | None = None


@dataclass(frozen=True)
class CampaignConfig:
    seed: int
    sizes: tuple[int, ...]
    instances: int
    algorithms: tuple[AlgorithmSpec, ...]
    out: str = "annealtails-run"
    target_successes: float = 100
    cap: int = harness.DEFAULT_CAP
    threads: int = 1
    max_L: int = DEFAULT_MAX_L
    quantiles: tuple[float, ...] = harness.DEFAULT_QUANTILES
    n_boot: int = 1000
    tail: TailSpec = field(default_factory=TailSpec)
    correlations: tuple[tuple[str, str], ...] = ()

    def content(self) -> dict:
        """Everything that determines the artifacts (not out, not threads)."""
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d

    def content_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.content()).encode()).hexdigest()

    def algorithm(self, name: str) -> AlgorithmSpec:
        return next(a for a in self.algorithms if a.name == name)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _int_list(value, what):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{what} must be a non-empty list")
    try:
        out = tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must contain integers") from None
    return out


def _algorithm_from_dict(d: dict) -> AlgorithmSpec:
    if not isinstance(d, dict):
        raise ConfigError("algorithm entries must be mappings")
    unknown = set(d) - {f for f in AlgorithmSpec.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown algorithm keys {sorted(unknown)}")
    alg = str(d.get("algorithm", "")).lower()
    if alg not in ("sa", "sqa", "mfa"):
        raise ConfigError(f"algorithm must be sa, sqa or mfa, got {alg!r}")
    name = str(d.get("name", alg))
    t_a = d.get("t_a")
    t_a_grid = d.get("t_a_grid")
    if (t_a is None) == (t_a_grid is None):
        raise ConfigError(f"{name}: give exactly one of t_a and t_a_grid")
    beta_grid = d.get("beta_grid")
    if beta_grid is not None:
        if alg == "sa":
            raise ConfigError(f"{name}: beta_grid is not available for sa")
        if t_a_grid is None:
            raise ConfigError(f"{name}: beta_grid needs t_a_grid")
        if not isinstance(beta_grid, (list, tuple)) or not beta_grid:
            raise ConfigError(f"{name}: beta_grid must be a non-empty list")
        beta_grid = tuple(float(b) for b in beta_grid)
    elif alg != "sa" and d.get("beta") is None:
        raise ConfigError(f"{name}: {alg} needs beta")
    spec = AlgorithmSpec(
        name=name,
        algorithm=alg,
        t_a=None if t_a is None else int(t_a),
        t_a_grid=None if t_a_grid is None else _int_list(t_a_grid, f"{name}.t_a_grid"),
        beta=None if d.get("beta") is None else float(d["beta"]),
        beta_grid=beta_grid,
        M=int(d.get("M", 32)),
        table_size=int(d.get("table_size", 1024)),
    )
    try:
        spec.schedule(spec.t_a or spec.t_a_grid[0], spec.beta or (beta_grid or (None,))[0])
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return spec


def config_from_dict(d: dict) -> CampaignConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    known = set(CampaignConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if d.get("seed") is None:
        raise ConfigError("seed is required")
    max_L = int(d.get("max_L", DEFAULT_MAX_L))
    sizes = _int_list(d.get("sizes"), "sizes")
    for L in sizes:
        if not 1 <= L <= min(max_L, MAX_L):
            raise ConfigError(f"size L={L} outside the exact-solver range [1, {max_L}]")
    n_inst = int(d.get("instances", 0))
    if n_inst < 1:
        raise ConfigError("instances must be >= 1")
    algs = tuple(_algorithm_from_dict(a) for a in d.get("algorithms") or [])
    if not algs:
        raise ConfigError("at least one algorithm is required")
    names = [a.name for a in algs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate algorithm names in {names}")
    tail_d = d.get("tail") or {}
    tail = TailSpec(tuple(int(k) for k in tail_d.get("k_grid", ())),
                    None if tail_d.get("k") is None else int(tail_d["k"]))
    corr = []
    for pair in d.get("correlations") or []:
        if len(pair) != 2 or not set(pair) <= set(names):
            raise ConfigError(f"correlation pair {pair} must name two configured algorithms")
        corr.append((str(pair[0]), str(pair[1])))
    target = float(d.get("target_successes", 100))
    cap = int(d.get("cap", harness.DEFAULT_CAP))
    if cap < target or target <= 0:
        raise ConfigError(f"need 0 < target_successes <= cap, got {target} and {cap}")
    out = os.environ.get(OUT_ENV) or str(d.get("out", "annealtails-run"))
    return CampaignConfig(
        seed=int(d["seed"]), sizes=sizes, instances=n_inst, algorithms=algs, out=out,
        target_successes=target, cap=cap, threads=int(d.get("threads", 1)), max_L=max_L,
        quantiles=tuple(float(q) for q in d.get("quantiles", harness.DEFAULT_QUANTILES)),
        n_boot=int(d.get("n_boot", 1000)), tail=tail, correlations=tuple(corr),
    )


def load_config(path) -> CampaignConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data)


# -- file helpers --------------------------------------------------------------------


def instance_seed(master: int, L: int, instance_id: int) -> int:
    return stream_key(master, f"instances/L{L}", instance_id)


def load_instances(directory: Path):
    files = sorted(Path(directory).glob("*.txt"))
    return [read_instance(f, int(f.stem)) for f in files]


def write_ground_csv(energies: dict[int, int], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "E0"])
        for iid in sorted(energies):
            w.writerow([iid, energies[iid]])


def read_ground_csv(path) -> dict[int, int]:
    with open(path, newline="") as fh:
        return {int(r["instance_id"]): int(r["E0"]) for r in csv.DictReader(fh)}


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(_jsonable(obj)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fit_outputs(taus, k: int | None, threshold: float | None, directory: Path, stem: str):
    """Fit a GPD to ``taus`` above the top-``k`` threshold (or ``threshold``)
    and write ``{stem}fit.json`` plus PP/QQ CSVs. Returns the fit JSON dict."""
    taus = np.asarray(taus, dtype=float)
    try:
        u = evt.kth_largest_threshold(taus, k) if threshold is None else float(threshold)
        fit = evt.fit_gpd_mle(taus, u)
    except evt.EvtError as exc:
        out = {"error": str(exc), "k": k, "u": threshold}
        write_json(directory / f"{stem}fit.json", out)
        return out
    out = fit.to_json()
    write_json(directory / f"{stem}fit.json", out)
    exceed = taus[taus > fit.u]
    write_rows(directory / f"{stem}pp.csv", ["model_cdf", "empirical"],
               evt.pp_points(exceed, fit.params))
    try:
        qq = evt.qq_points(exceed, fit.params)
    except evt.EvtError:
        qq = np.empty((0, 2))
    write_rows(directory / f"{stem}qq.csv", ["model_quantile", "sample"], qq)
    return out


# -- stages --------------------------------------------------------------------------


class Pipeline:
    def __init__(self, config: CampaignConfig, out=None, threads: int | None = None):
        self.cfg = config
        self.out = Path(out or config.out)
        self.threads = config.threads if threads is None else threads

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def stage_generate(self):
        for L in self.cfg.sizes:
            g = build_chimera(L)
            for iid in range(self.cfg.instances):
                inst = generate_instance(g, instance_seed(self.cfg.seed, L, iid), iid)
                write_instance(inst, self.path("instances", f"L{L}", f"{iid:05d}.txt"))

    def stage_solve(self):
        for L in self.cfg.sizes:
            insts = load_instances(self.out / "instances" / f"L{L}")
            energies = {i.id: ground_energy(i, self.cfg.max_L) for i in insts}
            write_ground_csv(energies, self.path("ground", f"L{L}.csv"))

    def _inputs(self, L):
        insts = load_instances(self.out / "instances" / f"L{L}")
        return insts, read_ground_csv(self.out / "ground" / f"L{L}.csv")

    def _common(self):
        return dict(master_seed=self.cfg.seed, target_successes=self.cfg.target_successes,
                    cap=self.cfg.cap, threads=self.threads)

    def stage_tts(self):
        for spec in self.cfg.algorithms:
            if spec.scanned:
                continue
            for L in self.cfg.sizes:
                insts, e0 = self._inputs(L)
                recs = harness.batch_tts(insts, spec.schedule(spec.t_a), e0, **self._common())
                harness.write_tts_csv(recs, self.path("tts", spec.name, f"L{L}.csv"))

    def stage_scan(self):
        for spec in self.cfg.algorithms:
            if not spec.scanned:
                continue
            for L in self.cfg.sizes:
                insts, e0 = self._inputs(L)
                kw = dict(quantiles=self.cfg.quantiles, n_boot=self.cfg.n_boot, **self._common())
                if spec.beta_grid is None:
                    res = harness.scan_annealing_time(insts, spec.schedule, spec.t_a_grid, e0, **kw)
                    t_opt = int(res.optimum)
                    recs = res.records[t_opt]
                else:
                    res = harness.scan_beta(
                        insts, lambda t, b: spec.schedule(t, b), spec.beta_grid, spec.t_a_grid,
                        e0, **kw)
                    inner = res.records[res.optimum]
                    t_opt = int(inner.optimum)
                    recs = inner.records[t_opt]
                payload = res.to_json()
                payload["t_a_opt"] = t_opt
                write_json(self.path("scan", spec.name, f"L{L}.json"), payload)
                harness.write_tts_csv(recs, self.path("tts", spec.name, f"L{L}.csv"))

    def used_t_a(self, spec: AlgorithmSpec, L: int) -> int:
        if not spec.scanned:
            return spec.t_a
        scan = json.loads((self.out / "scan" / spec.name / f"L{L}.json").read_text())
        return int(scan["t_a_opt"])

    def _taus(self, spec, L):
        recs = harness.read_tts_csv(self.out / "tts" / spec.name / f"L{L}.csv")
        return sorted(recs, key=lambda r: r.instance_id)

    def stage_fit_tail(self):
        for spec in self.cfg.algorithms:
            for L in self.cfg.sizes:
                recs = self._taus(spec, L)
                taus = np.array([r.tau for r in recs if not math.isnan(r.tau)])
                d = self.out / "tail" / spec.name
                d.mkdir(parents=True, exist_ok=True)
                rm = harness.running_mean(taus) if taus.size else np.empty(0)
                write_rows(d / f"L{L}_running_mean.csv", ["n", "running_mean"],
                           [(i + 1, float(v)) for i, v in enumerate(rm)])
                scan = []
                for entry in evt.threshold_scan(taus, self.cfg.tail.k_grid):
                    row = {"k": entry.k, "u": entry.u}
                    row.update(entry.fit.to_json() if entry.fit else {"error": entry.error})
                    scan.append(row)
                write_json(d / f"L{L}_scan.json", scan)
                if self.cfg.tail.k is not None:
                    fit_outputs(taus, self.cfg.tail.k, None, d, f"L{L}_")

    def stage_report(self):
        rows = []
        for spec in self.cfg.algorithms:
            for L in self.cfg.sizes:
                recs = self._taus(spec, L)
                taus = [r.tau for r in recs if r.ok]
                med = harness.nearest_rank(np.sort(taus), 0.5) if taus else math.nan
                fit = {}
                fpath = self.out / "tail" / spec.name / f"L{L}_fit.json"
                if fpath.exists():
                    fit = json.loads(fpath.read_text())
                rows.append((spec.name, 8 * L * L, self.used_t_a(spec, L), float(med),
                             fit.get("k", ""), fit.get("u", ""), fit.get("xi", ""),
                             fit.get("xi_se", ""), fit.get("sigma", ""), fit.get("sigma_se", ""),
                             fit.get("error", "")))
        write_rows(self.path("report", "summary.csv"),
                   ["algorithm", "N", "t_a", "median_tau", "k", "u", "xi", "xi_se", "sigma",
                    "sigma_se", "error"], rows)
        for a, b in self.cfg.correlations:
            sa, sb = self.cfg.algorithm(a), self.cfg.algorithm(b)
            for L in self.cfg.sizes:
                res = harness.correlation_pairs(self._taus(sa, L), self._taus(sb, L),
                                                self.used_t_a(sa, L), self.used_t_a(sb, L))
                write_rows(self.path("report", f"correlation_{a}__{b}_L{L}.csv"),
                           ["instance_id", "tau_a", "tau_b", "effort_a", "effort_b"], res.rows)
                write_json(self.path("report", f"correlation_{a}__{b}_L{L}.json"),
                           {"n": res.n, "s_increase": res.n_s_increase,
                            "effort_decrease": res.n_effort_decrease})

    # -- checkpointing --------------------------------------------------------------

    def manifest(self) -> dict | None:
        p = self.out / MANIFEST
        return json.loads(p.read_text()) if p.exists() else None

    def _write_manifest(self, completed: list[str]):
        files = {}
        for p in sorted(self.out.rglob("*")):
            if p.is_file() and p.name != MANIFEST:
                files[p.relative_to(self.out).as_posix()] = sha256_file(p)
        write_json(self.out / MANIFEST, {"config_hash": self.cfg.content_hash(),
                                         "stages": completed, "files": files})

    def run(self, *, resume: bool = False, stop_after: str | None = None) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        stored = self.manifest()
        cfg_path = self.out / "config.json"
        completed: list[str] = []
        if stored is not None:
            if stored["config_hash"] != self.cfg.content_hash():
                old = cfg_path.read_text().splitlines() if cfg_path.exists() else []
                new = canonical_json(self.cfg.content()).splitlines()
                diff = "\n".join(difflib.unified_diff(old, new, "checkpoint", "config", lineterm=""))
                raise ConfigMismatch(diff)
            if resume:
                completed = list(stored["stages"])
                for rel, digest in stored["files"].items():
                    p = self.out / rel
                    if not p.exists() or sha256_file(p) != digest:
                        raise StageError("resume", RuntimeError(f"checkpointed file {rel} changed"),
                                         completed)
        if not cfg_path.exists():
            cfg_path.write_text(canonical_json(self.cfg.content()))
        for stage in STAGES:
            if stage in completed:
                continue
            try:
                getattr(self, "stage_" + stage.replace("-", "_"))()
            except (ValueError, RuntimeError, OSError, KeyError, ResourceLimit) as exc:
                raise StageError(stage, exc, completed) from exc
            completed.append(stage)
            self._write_manifest(completed)
            if stage == stop_after:
                break
        return self.out


def run_pipeline(config: CampaignConfig, out=None, threads=None, stop_after=None) -> Path:
    return Pipeline(config, out, threads).run(stop_after=stop_after)


def resume(config: CampaignConfig, out=None, threads=None) -> Path:
    """Finish an interrupted run; with no checkpoint this is a full run."""
    return Pipeline(config, out, threads).run(resume=True)
