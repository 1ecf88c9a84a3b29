"""Best validation RMSE of TPE vs pure random search over paired seeds."""
import argparse
import logging

from spectrohpo.experiments import tpe_vs_random


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/tpe_vs_random")
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--per-season", type=int, default=400)
    p.add_argument("--split", default="time_shift", choices=("random", "time_shift"))
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    rows = tpe_vs_random(args.out, args.seeds, args.budget, per_season=args.per_season, split=args.split,
                         workers=args.workers)
    wins = 0
    for r in rows:
        wins += r.tpe_best <= r.random_best
        print(f"seed {r.seed}: tpe {r.tpe_best:.4f} random {r.random_best:.4f} "
              f"gap {r.standardized_gap:+.4f} (standardized)")
    print(f"TPE at least as good in {wins}/{len(rows)} pairs")


if __name__ == "__main__":
    main()
