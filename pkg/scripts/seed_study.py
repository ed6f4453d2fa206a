"""Spread of the Table 1/2 dataset-1 statistics across seeds.

    python3 scripts/seed_study.py --seeds 1-8 --scale 20000
"""

import argparse
import tempfile

import numpy as np

from riskbias.experiments import ExperimentConfig, read_csv, run_experiment


def seed_range(text):
    lo, _, hi = text.partition("-")
    return range(int(lo), int(hi or lo) + 1)


def dataset1(path, estimator, column):
    return next(float(r[column]) for r in read_csv(path) if r["dataset"] == "dataset1" and r["estimator"] == estimator)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=seed_range, default=seed_range("1-8"))
    p.add_argument("--scale", type=int, default=20_000)
    p.add_argument("--bootstrap", type=int)
    args = p.parse_args()
    cols = [("MR plug-in", "table1", "plug-in", "MR"), ("MR b", "table1", "b", "MR"), ("T plug-in", "table1", "plug-in", "T"),
            ("T b", "table1", "b", "T"), ("S plug-in", "table1", "plug-in", "S"), ("S b", "table1", "b", "S"),
            ("G plug-in", "table2", "plug-in", "G"), ("G b", "table2", "b", "G")]
    values = {c[0]: [] for c in cols}
    with tempfile.TemporaryDirectory() as out:
        for seed in args.seeds:
            for exp in ("table1", "table2"):
                run_experiment(ExperimentConfig(exp, scale=args.scale, bootstrap=args.bootstrap, seed=seed, out=out,
                                                datasets=(1,)))
            row = []
            for label, exp, est, col in cols:
                v = dataset1(f"{out}/{exp}/{exp}.csv", est, col)
                values[label].append(v)
                row.append(f"{v:.5f}")
            print(seed, *row, sep="\t", flush=True)
    print("label\tmean\tmin\tmax")
    for label, v in values.items():
        print(f"{label}\t{np.mean(v):.5f}\t{np.min(v):.5f}\t{np.max(v):.5f}")
    s_ok = sum(b <= p for p, b in zip(values["S plug-in"], values["S b"]))
    print(f"S(b) <= S(plug-in) in {s_ok} of {len(values['S b'])} seeds")


if __name__ == "__main__":
    main()
