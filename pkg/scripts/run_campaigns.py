"""Run the n=10 and n=100 campaigns and apply the acceptance thresholds.

    python3 scripts/run_campaigns.py --out results/ [--mode full-ml] [--jobs 1]
"""
import argparse
from pathlib import Path

from hybridloc import harness
from hybridloc.gen import GenConfig


def campaign(outdir, mode, jobs, **fields):
    cfg = harness.McConfig(mode=mode, jobs=jobs, **fields)
    summary = harness.run_mc(cfg)
    harness.write_results(summary, outdir)
    report = harness.summarize(summary)
    print(f"--- {outdir} ({summary.elapsed:.0f} s)")
    print(harness.format_report(report))
    return report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--mode", default="unit", choices=["unit", "full-ml"])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)

    small = campaign(out / f"n10-{args.mode}", args.mode, args.jobs, gen=GenConfig(n=10),
                     min_trials=100, base_seed=args.seed)
    large = campaign(out / f"n100-{args.mode}", args.mode, args.jobs, gen=GenConfig(n=100),
                     metrics=("E1", "E2", "angles", "loc_error"), base_seed=args.seed)
    for report, base in ((small, None), (large, small)):
        for name, ok, detail in harness.check_report(report, base):
            print(f"[{'PASS' if ok else 'FAIL'}] n={report['n']} {name}: {detail}")


if __name__ == "__main__":
    main()
