"""Desk-scale campaigns behind the slow acceptance criteria.

Each campaign is a pipeline config; each check reads a finished bundle and
returns ``(passed, detail)``. ``run_desk.py`` runs them (optionally with fewer
instances) and the slow acceptance tests run them at full size.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from annealtails import harness, pipeline
from annealtails.evt import MIN_EXCEEDANCES

ROOT = Path(__file__).resolve().parents[1]
RUNS = ROOT / "runs" / "desk"
SEED = 20150701

SQA_SLOW = {"algorithm": "sqa", "beta": 10.0, "M": 32, "t_a": 10_000}

CAMPAIGNS = {
    # median tau at N=200
    "median_n200": {
        "sizes": [5], "instances": 2000,
        "algorithms": [{"name": "sa_slow", "algorithm": "sa", "t_a": 10_000},
                       {"name": "sqa_slow", **SQA_SLOW}],
    },
    # tail shapes at N=32 and N=72
    "tails_small_sa": {
        "sizes": [2, 3], "instances": 1000,
        "algorithms": [{"name": "sa_opt", "algorithm": "sa", "t_a_grid": [2, 3, 5, 10, 20, 40, 80]}],
        "tail": {"k_grid": [50, 100, 200], "k": 100},
    },
    "tails_small_sqa": {
        "sizes": [2], "instances": 1000,
        "algorithms": [{"name": "sqa_slow", **SQA_SLOW}],
        "tail": {"k_grid": [50, 100, 200], "k": 100},
    },
    # tail ordering, fast-schedule paradox and the SQA running mean at N=128
    "tails_n128": {
        "sizes": [4], "instances": 2000,
        "algorithms": [
            {"name": "sqa_slow", **SQA_SLOW},
            {"name": "sqa_opt", "algorithm": "sqa", "beta": 10.0, "M": 32, "t_a_grid": [50, 100, 150, 200]},
            {"name": "sa_opt", "algorithm": "sa", "t_a_grid": [35, 70, 140]},
        ],
        "tail": {"k_grid": [100, 200, 400], "k": 200},
        "correlations": [["sqa_slow", "sqa_opt"]],
    },
    # optimal annealing time at N=200
    "ta_scan_n200": {
        "sizes": [5], "instances": 500,
        "algorithms": [{"name": "sqa_scan", "algorithm": "sqa", "beta": 10.0, "M": 32,
                        "t_a_grid": [50, 100, 150, 200, 400]}],
    },
}


def config(name: str, instances: int | None = None) -> pipeline.CampaignConfig:
    d = {"seed": SEED, "n_boot": 1000, **CAMPAIGNS[name]}
    if instances is not None:
        d["instances"] = instances
        # keep the tail fraction of the full campaign
        tail = d.get("tail")
        if tail:
            full = CAMPAIGNS[name]["instances"]
            scale = lambda k: max(MIN_EXCEEDANCES, round(k * instances / full))
            d["tail"] = {"k_grid": sorted({scale(k) for k in tail["k_grid"]}), "k": scale(tail["k"])}
    return pipeline.config_from_dict(d)


def bundle_dir(name: str, instances: int | None = None) -> Path:
    full = instances is None or instances == CAMPAIGNS[name]["instances"]
    return RUNS / (name if full else f"{name}-n{instances}")


def run(name: str, instances: int | None = None, threads: int = 1) -> Path:
    """Run or finish a campaign; a complete bundle is only verified."""
    return pipeline.resume(config(name, instances), bundle_dir(name, instances), threads)


# -- reading bundles -----------------------------------------------------------------


def summary(d: Path) -> dict[tuple[str, int], dict]:
    with open(d / "report" / "summary.csv", newline="") as fh:
        return {(r["algorithm"], int(r["N"])): r for r in csv.DictReader(fh)}


def fit(d: Path, alg: str, L: int) -> dict:
    return json.loads((d / "tail" / alg / f"L{L}_fit.json").read_text())


def records(d: Path, alg: str, L: int) -> list[harness.TtsRecord]:
    return sorted(harness.read_tts_csv(d / "tts" / alg / f"L{L}.csv"), key=lambda r: r.instance_id)


def _fmt_fit(f: dict) -> str:
    if "error" in f:
        return f"fit error: {f['error']}"
    return f"xi={f['xi']:.3f}+-{f['xi_se']:.3f} (k={f['k']}, u={f['u']:.4g})"


# -- criteria ------------------------------------------------------------------------


def check_median_tau(d: Path):
    s = summary(d)
    sa = float(s[("sa_slow", 200)]["median_tau"])
    sqa = float(s[("sqa_slow", 200)]["median_tau"])
    ok = abs(sa - 2.1) <= 0.3 and abs(sqa - 2.2) <= 0.4
    return ok, f"median tau SA={sa:.3f} (2.1+-0.3), SQA={sqa:.3f} (2.2+-0.4)"


# published shape estimates (xi, SE) from 20000-instance campaigns
REFERENCE_XI = {("sa_opt", 32): (-0.32, 0.06), ("sa_opt", 72): (0.06, 0.03), ("sqa_slow", 32): (0.63, 0.12)}


def _shape_ok(f: dict, ref: tuple[float, float], condition) -> tuple[bool, str]:
    if "error" in f:
        return False, _fmt_fit(f)
    comb = math.hypot(f["xi_se"], ref[1])
    near = abs(f["xi"] - ref[0]) <= 3 * comb
    ok = condition(f["xi"]) and near
    return ok, f"{_fmt_fit(f)} vs reference {ref[0]}+-{ref[1]}, within 3 SE: {near}"


def check_small_shapes(d_sa: Path, d_sqa: Path):
    parts = [
        ("SA N=32 xi<0", _shape_ok(fit(d_sa, "sa_opt", 2), REFERENCE_XI[("sa_opt", 32)], lambda x: x < 0)),
        ("SA N=72 |xi|<=0.2", _shape_ok(fit(d_sa, "sa_opt", 3), REFERENCE_XI[("sa_opt", 72)],
                                        lambda x: abs(x) <= 0.2)),
        ("SQA N=32 xi>0.3", _shape_ok(fit(d_sqa, "sqa_slow", 2), REFERENCE_XI[("sqa_slow", 32)],
                                      lambda x: x > 0.3)),
    ]
    return all(ok for _, (ok, _) in parts), "; ".join(f"{n}: {det}" for n, (_, det) in parts)


def check_tail_ordering(d: Path):
    slow, opt, sa = fit(d, "sqa_slow", 4), fit(d, "sqa_opt", 4), fit(d, "sa_opt", 4)
    detail = f"SQA t_a=1e4 {_fmt_fit(slow)}; SQA t_a_opt {_fmt_fit(opt)}; SA t_a_opt {_fmt_fit(sa)}"
    if any("error" in f for f in (slow, opt, sa)):
        return False, detail
    ok = slow["xi"] > opt["xi"] > 0 and sa["xi"] < opt["xi"] + 2 * opt["xi_se"]
    return ok, detail


def check_fast_paradox(d: Path):
    c = json.loads((d / "report" / "correlation_sqa_slow__sqa_opt_L4.json").read_text())
    up, down = c["s_increase"] / c["n"], c["effort_decrease"] / c["n"]
    ok = c["n"] >= 1000 and up >= 0.05 and down >= 0.95
    return ok, (f"n={c['n']}: s increases for {c['s_increase']} ({up:.1%}, need >=5%), "
                f"effort drops for {c['effort_decrease']} ({down:.1%}, need >=95%)")


def check_ta_optimum(d: Path):
    scan = json.loads((d / "scan" / "sqa_scan" / "L5.json").read_text())
    t = scan["t_a_opt"]
    ok = t in (100, 150, 200)
    return ok, f"t_a_opt={t} (150 or a neighbour), per-quantile optima {scan['per_quantile_optimum']}"


def running_mean_jumps(taus, start: int = 1000, rel: float = 0.2) -> list[int]:
    """Indices n > start where the running mean rose by more than ``rel``."""
    m = harness.running_mean(taus)
    if len(m) <= start:
        return []
    r = m[start:] / m[start - 1:-1] - 1.0
    return [int(i) + start + 1 for i in np.flatnonzero(r > rel)]


def check_sqa_running_mean(d: Path):
    taus = [r.tau for r in records(d, "sqa_slow", 4)]
    jumps = running_mean_jumps(taus)
    return bool(jumps), f"{len(taus)} instances, jumps > 20% beyond n=1000 at n={jumps[:10]}"


# criterion -> (campaigns it reads, check taking their bundle directories)
CHECKS = {
    5: (["median_n200"], check_median_tau),
    6: (["tails_small_sa", "tails_small_sqa"], check_small_shapes),
    7: (["tails_n128"], check_tail_ordering),
    8: (["tails_n128"], check_fast_paradox),
    9: (["ta_scan_n200"], check_ta_optimum),
    10: (["tails_n128"], check_sqa_running_mean),
}
