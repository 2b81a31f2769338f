"""Train SASRec-style, MQSA and MQSA-TED configurations on synthetic corpora and compare."""

import argparse
import time
from dataclasses import replace

import numpy as np

from transrec import model as M
from transrec.baselines import transition_scorer
from transrec.dataio import leave_one_out_split
from transrec.evaluator import add_groups, evaluate, evaluate_scorer
from transrec.synthetic import SyntheticConfig, generate
from transrec.trainer import TrainConfig, sasrec_preset, train
from transrec.transition import build_transition_graph


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--patience", type=int, default=5)
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--blocks", type=int, default=1)
    ap.add_argument("--dropout", type=float, default=0.3)
    ap.add_argument("--long-len", type=int, default=3)
    ap.add_argument("--lambda-kd", type=float, default=0.1)
    ap.add_argument("--p-transition", type=float, default=SyntheticConfig.p_transition)
    ap.add_argument("--p-noise", type=float, default=SyntheticConfig.p_noise)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--successors", type=int, default=SyntheticConfig.successors)
    ap.add_argument("--clusters", type=int, default=SyntheticConfig.clusters)
    args = ap.parse_args()

    base = M.ModelConfig(d=args.d, max_len=20, num_blocks=args.blocks, long_len=args.long_len,
                         alpha=0.5, dropout=args.dropout, tau=0.1, lambda_kd=args.lambda_kd)
    variants = {"sasrec": sasrec_preset(base), "mqsa": replace(base, lambda_kd=0.0), "mqsa_ted": base}
    for seed in range(args.seeds):
        ds = generate(SyntheticConfig(seed=seed, p_transition=args.p_transition, p_noise=args.p_noise,
                                      successors=args.successors, clusters=args.clusters))
        split = leave_one_out_split(ds)
        graph = build_transition_graph(split.train, split.item_count, 1)
        line = [f"seed {seed}"]
        it = add_groups(evaluate_scorer(transition_scorer(graph), split, "test", (10,)), split, graph)
        line.append(f"IT ndcg10={it.value('ndcg', 10):.4f} b0hr={it.value('hr', 10, '0'):.3f} "
                    f"b4hr={it.value('hr', 10, '>=4'):.3f}")
        for name, cfg in variants.items():
            t = time.perf_counter()
            params, hist = train(cfg, TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                                                  max_epochs=args.epochs, patience=args.patience,
                                                  seed=seed), split, graph)
            rep = add_groups(evaluate(params, cfg, split, "test", (10,)), split, graph)
            ge2 = [g for g in ("2", "3", ">=4") if rep.group_counts[g]]
            n2 = sum(rep.group_counts[g] for g in ge2)
            b2 = sum(rep.value("ndcg", 10, g) * rep.group_counts[g] for g in ge2) / max(n2, 1)
            line.append(f"{name} ndcg10={rep.value('ndcg', 10):.4f} b0={rep.value('hr', 10, '0'):.3f} "
                        f"b>=2={b2:.4f} ep={hist.best_epoch}/{len(hist.records)} {time.perf_counter() - t:.0f}s")
        print(" | ".join(line), flush=True)


if __name__ == "__main__":
    main()
