"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import annealers, evt, harness, pipeline
from .exact import ResourceLimit, dp_ground
from .instances import InvalidParameter, ParseError, build_chimera, generate_instance
from .instances import read_instance, write_instance
from .rng import combine, stream_key

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("annealtails")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--cap", type=int, default=harness.DEFAULT_CAP, help="repetition cap")
    p.add_argument("--target-successes", type=float, default=100.0)
    return p


def _schedule_args(p: argparse.ArgumentParser, grid: bool = False) -> None:
    p.add_argument("--algorithm", choices=("sa", "sqa", "mfa"), required=True)
    if grid:
        p.add_argument("--grid", type=_ints, required=True, help="annealing times, e.g. 50,100")
    else:
        p.add_argument("--t-a", type=int, required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--M", type=int, default=32, help="Trotter slices (sqa)")
    p.add_argument("--table-size", type=int, default=1024, help="angle table size, 0 = exact (mfa)")


def _schedule(args, t_a: int, beta: float | None = None):
    beta = args.beta if beta is None else beta
    extra = {"table_size": args.table_size} if args.algorithm == "mfa" else {}
    return harness.make_schedule(args.algorithm, t_a, beta, args.M, **extra)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="annealtails", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write random chimera instances")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("solve", parents=[common], help="exact ground energies of an instance directory")
    p.add_argument("--instances", required=True)
    p.add_argument("--max-L", type=int, default=5)

    p = sub.add_parser("anneal", parents=[common], help="one annealing run")
    p.add_argument("--instance", required=True)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--E0", type=int, default=None, help="ground energy (solved if omitted)")
    _schedule_args(p)

    p = sub.add_parser("tts", parents=[common], help="TtsRecord CSV for an instance directory")
    p.add_argument("--instances", required=True)
    p.add_argument("--ground", required=True)
    _schedule_args(p)

    for name, helptext in (("scan-ta", "scan annealing times"), ("scan-beta", "scan beta")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--instances", required=True)
        p.add_argument("--ground", required=True)
        p.add_argument("--n-boot", type=int, default=1000)
        _schedule_args(p, grid=True)
        if name == "scan-beta":
            p.add_argument("--beta-grid", type=_floats, required=True)

    p = sub.add_parser("fit-tail", parents=[common], help="GPD fit of a TtsRecord CSV")
    p.add_argument("--tts", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--threshold", type=float, default=None)
    p.add_argument("--scan", type=_ints, default=None, help="k grid, e.g. 30,50,100")

    for name in ("report", "pipeline", "resume"):
        p = sub.add_parser(name, parents=[common], help=f"{name} a campaign")
        p.add_argument("config")
        if name == "pipeline":
            p.add_argument("--stop-after", choices=pipeline.STAGES, default=None)
    return parser


def _require_seed(args) -> int:
    if args.seed is None:
        raise pipeline.ConfigError("--seed is required")
    return args.seed


def _out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_generate(args) -> None:
    seed = _require_seed(args)
    g = build_chimera(args.L)
    d = _out_dir(args, f"instances/L{args.L}")
    for iid in range(args.count):
        inst = generate_instance(g, pipeline.instance_seed(seed, args.L, iid), iid)
        write_instance(inst, d / f"{iid:05d}.txt")
    print(f"wrote {args.count} instances to {d}")


def cmd_solve(args) -> None:
    insts = pipeline.load_instances(Path(args.instances))
    energies = {i.id: dp_ground(i, max_L=args.max_L).energy for i in insts}
    out = Path(args.out or "ground.csv")
    pipeline.write_ground_csv(energies, out)
    print(f"wrote {len(energies)} ground energies to {out}")


def cmd_anneal(args) -> None:
    """Per-run ``run_index,success_fraction,final_energy`` CSV; run ``r`` uses
    the same stream as repetition ``r`` of the ``tts`` command."""
    seed = _require_seed(args)
    sched = _schedule(args, args.t_a)
    path = Path(args.instance)
    iid = int(path.stem) if path.stem.isdigit() else 0
    inst = read_instance(path, iid)
    E0 = args.E0 if args.E0 is not None else dp_ground(inst).energy
    base = np.uint64(stream_key(seed, f"tts/{harness.schedule_tag(sched)}", iid))
    lines = ["run_index,success_fraction,final_energy"]
    for r in range(args.repetitions):
        out = annealers.run(inst, sched, E0, int(combine(base, np.uint64(r))))
        lines.append(f"{r},{float(out.success_fraction)!r},{int(out.final_energy)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _tts_inputs(args):
    insts = pipeline.load_instances(Path(args.instances))
    return insts, pipeline.read_ground_csv(args.ground)


def cmd_tts(args) -> None:
    seed = _require_seed(args)
    insts, e0 = _tts_inputs(args)
    recs = harness.batch_tts(insts, _schedule(args, args.t_a), e0, master_seed=seed,
                             target_successes=args.target_successes, cap=args.cap,
                             threads=args.threads)
    out = Path(args.out or "tts.csv")
    harness.write_tts_csv(recs, out)
    print(f"wrote {len(recs)} records to {out}")


def _scan_kw(args, seed):
    return dict(n_boot=args.n_boot, master_seed=seed, target_successes=args.target_successes,
                cap=args.cap, threads=args.threads)


def cmd_scan_ta(args) -> None:
    seed = _require_seed(args)
    insts, e0 = _tts_inputs(args)
    res = harness.scan_annealing_time(insts, lambda t: _schedule(args, t), args.grid, e0,
                                      **_scan_kw(args, seed))
    payload = res.to_json()
    payload["t_a_opt"] = int(res.optimum)
    out = Path(args.out or "scan_ta.json")
    pipeline.write_json(out, payload)
    print(f"t_a_opt = {int(res.optimum)}" + (" (quantile optima disagree)" if res.quantiles_disagree else ""))


def cmd_scan_beta(args) -> None:
    seed = _require_seed(args)
    insts, e0 = _tts_inputs(args)
    res = harness.scan_beta(insts, lambda t, b: _schedule(args, t, b), args.beta_grid, args.grid,
                            e0, **_scan_kw(args, seed))
    payload = res.to_json()
    payload["t_a_opt"] = int(res.records[res.optimum].optimum)
    out = Path(args.out or "scan_beta.json")
    pipeline.write_json(out, payload)
    print(f"beta_opt = {res.optimum} at t_a = {payload['t_a_opt']}")


def cmd_fit_tail(args) -> None:
    if args.k is None and args.threshold is None and not args.scan:
        raise pipeline.ConfigError("give --k, --threshold or --scan")
    recs = harness.read_tts_csv(args.tts)
    taus = np.array([r.tau for r in sorted(recs, key=lambda r: r.instance_id)])
    d = _out_dir(args, "tail")
    if args.scan:
        rows = []
        for e in evt.threshold_scan(taus, args.scan):
            row = {"k": e.k, "u": e.u}
            row.update(e.fit.to_json() if e.fit else {"error": e.error})
            rows.append(row)
        pipeline.write_json(d / "scan.json", rows)
    if args.k is None and args.threshold is None:
        return
    fit = pipeline.fit_outputs(taus, args.k, args.threshold, d, "")
    if "error" in fit:
        raise evt.EvtError(fit["error"])
    print(json.dumps(fit))


def _campaign(args):
    try:
        raw = yaml.safe_load(Path(args.config).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise pipeline.ConfigError(f"cannot read config {args.config}: {exc}") from None
    if args.seed is not None and isinstance(raw, dict):
        raw = {**raw, "seed": args.seed}
    return pipeline.config_from_dict(raw), args.out, args.threads


def cmd_pipeline(args) -> None:
    cfg, out, threads = _campaign(args)
    d = pipeline.Pipeline(cfg, out, threads).run(stop_after=args.stop_after)
    print(f"bundle in {d}")


def cmd_resume(args) -> None:
    cfg, out, threads = _campaign(args)
    print(f"bundle in {pipeline.resume(cfg, out, threads)}")


def cmd_report(args) -> None:
    cfg, out, threads = _campaign(args)
    p = pipeline.Pipeline(cfg, out, threads)
    p.stage_report()
    print((p.out / "report" / "summary.csv").read_text(), end="")


COMMANDS = {
    "generate": cmd_generate, "solve": cmd_solve, "anneal": cmd_anneal, "tts": cmd_tts,
    "scan-ta": cmd_scan_ta, "scan-beta": cmd_scan_beta, "fit-tail": cmd_fit_tail,
    "report": cmd_report, "pipeline": cmd_pipeline, "resume": cmd_resume,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (pipeline.ConfigError, InvalidParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.StageError, ResourceLimit, ParseError, evt.EvtError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
