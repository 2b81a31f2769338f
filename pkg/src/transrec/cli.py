"""Command-line front end: prepare, train, evaluate, baseline, analyze."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import model as M
from .baselines import pop_scorer, transition_scorer
from .dataio import InteractionDataset, leave_one_out_split, load_sequences, write_sequences
from .errors import CheckpointError, ConfigError, MergeError, ParseError, TransrecError
from .evaluator import add_groups, evaluate, evaluate_scorer, read_report_csv, write_report_csv
from .trainer import TrainConfig, sasrec_preset, train
from .transition import build_transition_graph

log = logging.getLogger("transrec")

MODEL_PRESETS = ("mqsa_ted", "sasrec")


@dataclass
class RunConfig:
    dataset: str = ""
    out: str = "runs/default"
    model: str = "mqsa_ted"
    k: int = 1
    cutoffs: str = "5,10,20"
    model_config: M.ModelConfig = field(default_factory=M.ModelConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)

    RUN_KEYS = ("dataset", "out", "model", "k", "cutoffs")

    @classmethod
    def known_keys(cls) -> list[str]:
        return list(cls.RUN_KEYS) + M.ModelConfig.field_names() + [f.name for f in fields(TrainConfig)]

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "RunConfig":
        run_vals, model_vals, train_vals = {}, {}, {}
        model_types = {f.name: type(getattr(M.ModelConfig(), f.name)) for f in fields(M.ModelConfig)}
        train_types = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}
        run_types = {"dataset": str, "out": str, "model": str, "k": int, "cutoffs": str}
        for key, raw in pairs.items():
            if key in run_types:
                run_vals[key] = _convert(key, raw, run_types[key])
            elif key in model_types:
                model_vals[key] = _convert(key, raw, model_types[key])
            elif key in train_types:
                train_vals[key] = _convert(key, raw, train_types[key])
            else:
                raise ConfigError(f"unknown config key {key!r}")
        model = run_vals.get("model", "mqsa_ted")
        if model not in MODEL_PRESETS:
            raise ConfigError(f"config key 'model' must be one of {MODEL_PRESETS}, got {model!r}")
        try:
            mcfg = M.ModelConfig(**model_vals)
            tcfg = TrainConfig(**train_vals)
        except TransrecError as exc:
            raise ConfigError(str(exc)) from None
        if model == "sasrec":
            mcfg = sasrec_preset(mcfg)
        cfg = cls(model_config=mcfg, train_config=tcfg, **run_vals)
        parse_cutoffs(cfg.cutoffs)
        return cfg

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        for key in self.RUN_KEYS:
            lines.append(f"{key} = {getattr(self, key)}")
        for key, val in asdict(self.model_config).items():
            lines.append(f"{key} = {val}")
        for key, val in asdict(self.train_config).items():
            lines.append(f"{key} = {str(val).lower() if isinstance(val, bool) else val}")
        return "\n".join(lines) + "\n"


def _convert(key: str, raw: str, typ):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            pairs[key] = val
    return pairs


def parse_cutoffs(text: str) -> tuple[int, ...]:
    try:
        cutoffs = tuple(int(c) for c in text.split(",") if c.strip())
    except ValueError:
        raise ConfigError(f"cutoffs must be comma-separated integers, got {text!r}") from None
    if not cutoffs or min(cutoffs) < 1:
        raise ConfigError(f"cutoffs must be positive, got {text!r}")
    return cutoffs


def resolve_config(args) -> RunConfig:
    pairs = read_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        pairs[key.strip()] = val.strip()
    for key in ("dataset", "out", "seed", "model", "cutoffs"):
        val = getattr(args, key, None)
        if val is not None:
            pairs[key] = str(val)
    return RunConfig.from_pairs(pairs)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return out


def _load_split(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("config key 'dataset' is required")
    if not Path(cfg.dataset).exists():
        raise ConfigError(f"config key 'dataset': no such file {cfg.dataset}")
    return leave_one_out_split(load_sequences(cfg.dataset))


# ---------------------------------------------------------------- commands

def cmd_prepare(raw_path, out_dir) -> tuple[Path, Path]:
    """Turn ``user<TAB>item<TAB>timestamp`` triples into a sequence file and an id map."""
    events: dict[str, list[tuple[float, int, str]]] = {}
    with open(raw_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected 'user<TAB>item<TAB>timestamp'", lineno)
            try:
                ts = float(parts[2])
            except ValueError:
                raise ParseError(f"bad timestamp {parts[2]!r}", lineno) from None
            events.setdefault(parts[0], []).append((ts, lineno, parts[1]))
    if not events:
        raise ParseError("no interactions", None)
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    sequences = []
    for user, evs in events.items():
        user_map[user] = len(user_map) + 1
        seq = []
        for _, _, item in sorted(evs, key=lambda e: (e[0], e[1])):
            if item not in item_map:
                item_map[item] = len(item_map) + 1
            seq.append(item_map[item])
        sequences.append(seq)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = InteractionDataset.from_sequences(sequences, item_count=len(item_map),
                                           user_ids=list(user_map.values()))
    seq_path, map_path = out / "sequences.txt", out / "remap.tsv"
    write_sequences(ds, seq_path)
    with open(map_path, "w", encoding="utf-8", newline="\n") as fh:
        for kind, mapping in (("user", user_map), ("item", item_map)):
            for rawid, new in mapping.items():
                fh.write(f"{kind}\t{rawid}\t{new}\n")
    return seq_path, map_path


def cmd_train(cfg: RunConfig) -> Path:
    split = _load_split(cfg)
    out = _out_dir(cfg)
    graph = build_transition_graph(split.train, split.item_count, cfg.k)
    params, history = train(cfg.model_config, cfg.train_config, split, graph)
    M.save_checkpoint(out / "model.ckpt", params, cfg.model_config, split.item_count,
                      {"k": cfg.k, "seed": cfg.train_config.seed, "best_epoch": history.best_epoch})
    history.write_csv(out / "history.csv")
    return out


def cmd_evaluate(cfg: RunConfig, checkpoint, phase: str, grouped: bool) -> Path:
    split = _load_split(cfg)
    params, mcfg, item_count, extra = M.load_checkpoint(checkpoint)
    if item_count != split.item_count:
        raise CheckpointError(f"checkpoint vocabulary {item_count} != dataset vocabulary {split.item_count}")
    graph = build_transition_graph(split.train, split.item_count, int(extra.get("k", cfg.k)))
    report = evaluate(params, mcfg, split, phase, parse_cutoffs(cfg.cutoffs), graph)
    if grouped:
        add_groups(report, split, graph)
    out = _out_dir(cfg)
    path = out / f"report_{phase}.csv"
    write_report_csv(report, path)
    return path


def cmd_baseline(cfg: RunConfig, name: str, phase: str, grouped: bool) -> Path:
    split = _load_split(cfg)
    graph = build_transition_graph(split.train, split.item_count, cfg.k)
    if name == "pop":
        scorer = pop_scorer(split)
    elif name == "transition":
        scorer = transition_scorer(graph)
    else:
        raise ConfigError(f"unknown baseline {name!r}")
    report = evaluate_scorer(scorer, split, phase, parse_cutoffs(cfg.cutoffs))
    if grouped:
        add_groups(report, split, graph)
    out = _out_dir(cfg)
    path = out / f"report_{name}_{phase}.csv"
    write_report_csv(report, path)
    return path


def cmd_analyze(reports, out_dir, labels=None) -> Path:
    """Merge report CSVs into long-format ``method,metric,cutoff,group,value``."""
    if not reports:
        raise MergeError("analyze needs at least one report")
    labels = list(labels) if labels else [Path(r).stem for r in reports]
    if len(labels) != len(reports):
        raise MergeError("one label per report is required")
    merged, reference = [], None
    for label, path in zip(labels, reports):
        rows = read_report_csv(path)
        cutoffs = sorted({r["cutoff"] for r in rows})
        if reference is None:
            reference = cutoffs
        elif cutoffs != reference:
            raise MergeError(f"{path}: cutoffs {cutoffs} differ from {reference}")
        merged += [(label, r["metric"], r["cutoff"], r["group"], r["value"]) for r in rows]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "plot_data.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "metric", "cutoff", "group", "value"))
        for label, metric, n, group, value in merged:
            w.writerow((label, metric, n, group, repr(value)))
    (out / "config.txt").write_text(
        "# resolved run configuration\n"
        + "".join(f"report = {r}\n" for r in reports)
        + f"labels = {','.join(labels)}\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transrec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed (u64)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if dataset:
            p.add_argument("--dataset", help="sequence file")
            p.add_argument("--cutoffs", help="comma-separated N values, e.g. 5,10,20")

    p = sub.add_parser("prepare", help="convert user/item/timestamp triples")
    p.add_argument("raw")
    common(p, dataset=False)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--model", choices=MODEL_PRESETS)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--phase", choices=("valid", "test"), default="test")
    p.add_argument("--grouped", action="store_true")

    p = sub.add_parser("baseline", help="evaluate a non-learned baseline")
    p.add_argument("name")
    common(p)
    p.add_argument("--phase", choices=("valid", "test"), default="test")
    p.add_argument("--grouped", action="store_true")

    p = sub.add_parser("analyze", help="merge reports into plot data")
    p.add_argument("reports", nargs="+")
    p.add_argument("--labels", help="comma-separated method labels")
    common(p, dataset=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "prepare":
            seq, _ = cmd_prepare(args.raw, args.out or ".")
            print(seq)
        elif args.command == "analyze":
            labels = args.labels.split(",") if args.labels else None
            print(cmd_analyze(args.reports, args.out or ".", labels))
        else:
            cfg = resolve_config(args)
            if args.command == "train":
                print(cmd_train(cfg))
            elif args.command == "evaluate":
                print(cmd_evaluate(cfg, args.checkpoint, args.phase, args.grouped))
            elif args.command == "baseline":
                if args.name not in ("pop", "transition"):
                    parser.error(f"unknown baseline {args.name!r} (choose pop or transition)")
                print(cmd_baseline(cfg, args.name, args.phase, args.grouped))
    except (TransrecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
