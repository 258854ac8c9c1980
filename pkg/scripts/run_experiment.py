#!/usr/bin/env python3
"""Run one experiment config and print the per-scenario AUC table.

    python3 scripts/run_experiment.py configs/sweep.json runs/sweep
"""
import argparse
import json
import logging
import time
from pathlib import Path

from voiceqc.config import load_json
from voiceqc.experiment import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("out")
    ap.add_argument("-q", "--quiet", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(message)s")
    cfg = ExperimentConfig.from_dict(load_json(args.config))
    t0 = time.time()
    res = run_experiment(cfg, args.out)
    width = max(len(s.name) for s in res.scenarios)
    for s in res.scenarios:
        lo, hi = s.ci95
        print(f"{s.name:<{width}}  AUC {s.auc:.3f}  [{lo:.3f}, {hi:.3f}]")
    if res.trends:
        for fam, t in res.trends.items():
            print(f"{fam}: spearman vs severity {t['spearman_vs_severity']:+.2f}")
    if res.confusion is not None:
        print("confusion (rows true):", json.dumps(res.confusion.tolist()))
    print(f"report in {Path(args.out).resolve()} ({time.time() - t0:.0f} s)")


if __name__ == "__main__":
    main()
