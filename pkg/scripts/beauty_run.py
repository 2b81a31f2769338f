"""Full-scale run on Amazon Beauty: prepare, train SASRec-style and MQSA-TED, evaluate, merge.

Input is a ``user<TAB>item<TAB>timestamp`` dump (e.g. converted from the 5-core
ratings file). Expect hours of CPU time per model.

    python scripts/beauty_run.py beauty_raw.tsv --out runs/beauty
"""

import argparse
from pathlib import Path

from transrec import cli
from transrec.dataio import dataset_stats, load_sequences

SETTINGS = ["d=64", "max_len=50", "num_blocks=2", "batch_size=256", "alpha=0.5", "lambda_kd=0.1",
            "tau=0.1", "dropout=0.5", "learning_rate=0.001"]


def run(argv):
    code = cli.main(argv)
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("raw")
    ap.add_argument("--out", default="runs/beauty")
    ap.add_argument("--long-len", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--models", default="sasrec,mqsa_ted")
    args = ap.parse_args()

    out = Path(args.out)
    seq, _ = cli.cmd_prepare(args.raw, out / "data")
    print(dataset_stats(load_sequences(seq)))

    reports, labels = [], []
    for name in args.models.split(","):
        run_dir = out / name
        flags = [f"--set={s}" for s in SETTINGS + [f"long_len={args.long_len}"]]
        common = ["--dataset", str(seq), "--out", str(run_dir), "--seed", str(args.seed), *flags]
        run(["train", "--model", name, *common])
        run(["evaluate", "--checkpoint", str(run_dir / "model.ckpt"), "--grouped", *common])
        reports.append(str(run_dir / "report_test.csv"))
        labels.append(name)
    run(["analyze", *reports, "--labels", ",".join(labels), "--out", str(out)])


if __name__ == "__main__":
    main()
