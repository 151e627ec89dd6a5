"""Write a synthetic calibration/augmentation pair for trying the CLI.

Produces ``cal.jsonl`` (gold scored), ``aug.jsonl`` (surrogate only) and
``aug_gold.jsonl`` (the augmentation records with their hidden gold scores,
for ``condfilter metrics``).
"""

import argparse
from pathlib import Path

from condfilter.evalsim import HETEROGENEOUS, HOMOGENEOUS, ScenarioSpec, generate_scenario
from condfilter.io import write_records
from condfilter.model import SampleRecord, ScoredGeneration


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--n-cal", type=int, default=200)
    ap.add_argument("--n-aug", type=int, default=100)
    ap.add_argument("--K", type=int, default=5)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--heterogeneous", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = ScenarioSpec(n_cal=args.n_cal, n_aug=args.n_aug, K=args.K, d=args.d, seed=args.seed,
                        gold_model=HETEROGENEOUS if args.heterogeneous else HOMOGENEOUS)
    sc = generate_scenario(spec)
    args.outdir.mkdir(parents=True, exist_ok=True)
    write_records(args.outdir / "cal.jsonl", sc.cal)
    write_records(args.outdir / "aug.jsonl", sc.aug)
    with_gold = [
        SampleRecord(r.sample_id, r.embedding, r.label,
                     tuple(ScoredGeneration(g.gen_id, g.surrogate, sc.hidden_gold[r.sample_id][g.gen_id])
                           for g in r.generations))
        for r in sc.aug
    ]
    write_records(args.outdir / "aug_gold.jsonl", with_gold)
    print(f"wrote {len(sc.cal)} calibration and {len(sc.aug)} augmentation records to {args.outdir}")


if __name__ == "__main__":
    main()
