"""Run desk-scale campaigns and evaluate the slow acceptance criteria.

    python scripts/run_desk.py                         # every criterion, full size
    python scripts/run_desk.py 6 --instances 200       # one criterion, smaller sample

Reduced runs keep the seed and the tail fraction, so the first n instances
match the full campaign exactly. Bundles go to runs/desk/.
"""

from __future__ import annotations

import argparse
import json
import logging
import time

import desk


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("criteria", nargs="*", type=int, default=sorted(desk.CHECKS))
    ap.add_argument("--instances", type=int, default=None, help="instances per campaign")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    results = {}
    for c in args.criteria:
        names, check = desk.CHECKS[c]
        dirs = []
        for name in names:
            t0 = time.perf_counter()
            dirs.append(desk.run(name, args.instances, args.threads))
            logging.info("campaign %s done in %.0f s", name, time.perf_counter() - t0)
        ok, detail = check(*dirs)
        results[c] = {"passed": ok, "detail": detail, "instances": args.instances or "full"}
        print(f"criterion {c}: {'PASS' if ok else 'FAIL'} {detail}", flush=True)

    tag = "" if args.instances is None else f"-n{args.instances}"
    out = desk.RUNS / f"results{tag}.json"
    old = json.loads(out.read_text()) if out.exists() else {}
    old.update({str(k): v for k, v in results.items()})
    out.write_text(json.dumps(old, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
