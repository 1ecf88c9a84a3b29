"""Re-train one configuration many times and simulate ensembles of growing size.

Defaults to the hand-designed CNN_B baseline on synthetic drift data. The
N=1 column of the output doubles as the seed-variance study of a single
network.
"""
import argparse
import json
import logging
from pathlib import Path

import numpy as np

from spectrohpo.ensemble import EnsembleSpec, simulate_ensemble_sizes, train_ensemble, write_size_study
from spectrohpo.experiments import desk_dataset
from spectrohpo.nnet import CNN_B, HyperConfig, TrainSchedule
from spectrohpo.splits import SplitSpec, split_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/ensemble_sizes")
    p.add_argument("--pool-size", type=int, default=200)
    p.add_argument("--sizes", type=int, nargs="+", default=[1, 2, 5, 10, 25, 40])
    p.add_argument("--combos", type=int, default=200)
    p.add_argument("--per-season", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="HyperConfig JSON; default CNN_B")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = CNN_B
    if args.config:
        config = HyperConfig.from_dict(json.loads(Path(args.config).read_text()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = split_dataset(desk_dataset(args.seed, args.per_season), SplitSpec("random", seed=args.seed))
    pool = train_ensemble(config, data, TrainSchedule.desk(), EnsembleSpec(args.pool_size, args.seed),
                          workers=args.workers)
    pool.to_csv(out / "pool.csv")
    study = simulate_ensemble_sizes(pool, [n for n in args.sizes if n <= pool.size], args.combos, args.seed)
    write_size_study(study, out / "ensemble_sizes.csv")
    for n, dist in study.items():
        q1, med, q3 = np.percentile(dist.rmse, [25, 50, 75])
        print(f"N={n:3d} median {med:.4f} IQR {q3 - q1:.4f} ({len(dist.rmse)} ensembles)")


if __name__ == "__main__":
    main()
