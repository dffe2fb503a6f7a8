"""Repeated holdout at 15+15 prototypes, 100 repetitions.

With --train/--test feature tables this runs the published split; without them
it generates a synthetic cohort with a held-out group as a stand-in.
"""
import argparse

from boawdx.cli import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train")
    ap.add_argument("--test")
    ap.add_argument("--out-dir", default="runs/table3")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--repetitions", type=int, default=100)
    args = ap.parse_args(argv)
    g = ["--seed", str(args.seed), "--workers", str(args.workers), "--out-dir", args.out_dir]
    train, test = args.train, args.test
    if train is None:
        main(g + ["synth", "--subjects-per-class", "20", "20", "--holdout", "6"])
        train, test = f"{args.out_dir}/synth_table.csv", f"{args.out_dir}/synth_table_test.csv"
    main(g + ["scale", "--train", train, "--test", test])
    main(g + ["select", "--table", f"{args.out_dir}/train_scaled.csv"])
    return main(g + ["evaluate", "--train", f"{args.out_dir}/train_scaled.csv",
                     "--test", f"{args.out_dir}/test_scaled.csv", "--selection", f"{args.out_dir}/selection.json",
                     "--protocol", "table3", "--repetitions", str(args.repetitions)])


if __name__ == "__main__":
    raise SystemExit(run())
