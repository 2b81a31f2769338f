import csv

import numpy as np
import pytest

from transrec import cli
from transrec import model as M
from transrec.dataio import InteractionDataset, leave_one_out_split, load_sequences, write_sequences
from transrec.errors import ConfigError, MergeError, ParseError
from transrec.evaluator import BUCKETS, evaluate, write_report_csv
from transrec.synthetic import SyntheticConfig, generate
from transrec.transition import build_transition_graph

FAST = ["--set", "d=8", "--set", "max_len=8", "--set", "num_blocks=1", "--set", "max_epochs=2",
        "--set", "batch_size=32", "--set", "record_time=false"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    ds = generate(SyntheticConfig(item_count=30, user_count=80, clusters=3, min_len=4, max_len=9, seed=3))
    path = root / "seq.txt"
    write_sequences(ds, path)
    return path


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--dataset", str(corpus), "--out", str(out), "--seed", "1", *FAST]) == 0
    return out


# ---------------------------------------------------------------- prepare

def test_prepare_orders_by_timestamp(tmp_path):
    raw = tmp_path / "raw.tsv"
    raw.write_text("u1\tc\t30\nu1\ta\t10\nu1\tb\t20\n")
    seq_path, map_path = cli.cmd_prepare(raw, tmp_path / "out")
    ds = load_sequences(seq_path)
    mapping = {line.split("\t")[1]: int(line.split("\t")[2])
               for line in map_path.read_text().splitlines() if line.startswith("item")}
    assert [mapping[c] for c in "abc"] == list(ds.sequences[0])


def test_prepare_stable_ties(tmp_path):
    raw = tmp_path / "raw.tsv"
    raw.write_text("u\tx\t5\nu\ty\t5\nu\tz\t1\nu\tw\t5\n")
    seq_path, map_path = cli.cmd_prepare(raw, tmp_path / "out")
    inv = {int(l.split("\t")[2]): l.split("\t")[1]
           for l in map_path.read_text().splitlines() if l.startswith("item")}
    assert [inv[i] for i in load_sequences(seq_path).sequences[0]] == ["z", "x", "y", "w"]


def test_prepare_bad_line_names_line(tmp_path):
    raw = tmp_path / "raw.tsv"
    raw.write_text("u\tx\t5\nu\ty\n")
    with pytest.raises(ParseError, match="line 2"):
        cli.cmd_prepare(raw, tmp_path / "out")
    assert cli.main(["prepare", str(raw), "--out", str(tmp_path / "o2")]) != 0


# ---------------------------------------------------------------- config

def test_sasrec_preset_forces_alpha_and_kd():
    cfg = cli.RunConfig.from_pairs({"model": "sasrec", "alpha": "0.3", "lambda_kd": "0.5"})
    assert cfg.model_config.alpha == 1.0 and cfg.model_config.lambda_kd == 0.0


def test_unknown_key_is_named(capsys, corpus, tmp_path):
    with pytest.raises(ConfigError, match="bogus_key"):
        cli.RunConfig.from_pairs({"bogus_key": "1"})
    assert cli.main(["train", "--dataset", str(corpus), "--out", str(tmp_path), "--set", "bogus_key=1"]) != 0
    assert "bogus_key" in capsys.readouterr().err


def test_missing_dataset_is_config_error(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path)]) != 0
    assert "dataset" in capsys.readouterr().err
    assert cli.main(["train", "--out", str(tmp_path), "--dataset", str(tmp_path / "nope.txt")]) != 0


def test_config_file_and_flag_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# comment\nd = 16\nseed = 3  # trailing\nlearning_rate = 0.01\n")
    args = cli.build_parser().parse_args(["train", "--config", str(conf), "--seed", "9", "--set", "d=4"])
    cfg = cli.resolve_config(args)
    assert cfg.model_config.d == 4 and cfg.train_config.seed == 9
    assert cfg.train_config.learning_rate == 0.01


def test_resolved_config_round_trips(tmp_path):
    cfg = cli.RunConfig.from_pairs({"d": "12", "record_time": "false", "cutoffs": "1,7"})
    path = tmp_path / "c.txt"
    path.write_text(cfg.to_text())
    assert cli.RunConfig.from_pairs(cli.read_config_file(path)) == cfg


# ---------------------------------------------------------------- train / evaluate

def test_train_outputs(trained):
    assert {p.name for p in trained.iterdir()} >= {"model.ckpt", "history.csv", "config.txt"}
    lines = (trained / "history.csv").read_text().splitlines()
    assert len(lines) == 3


def test_same_seed_identical_history(corpus, trained, tmp_path):
    assert cli.main(["train", "--dataset", str(corpus), "--out", str(tmp_path), "--seed", "1", *FAST]) == 0
    assert (tmp_path / "history.csv").read_bytes() == (trained / "history.csv").read_bytes()
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_evaluate_matches_library_bytes(corpus, trained, tmp_path):
    out = tmp_path / "eval"
    assert cli.main(["evaluate", "--dataset", str(corpus), "--checkpoint", str(trained / "model.ckpt"),
                     "--out", str(out)]) == 0
    params, mcfg, _, _ = M.load_checkpoint(trained / "model.ckpt")
    split = leave_one_out_split(load_sequences(corpus))
    graph = build_transition_graph(split.train, split.item_count, 1)
    write_report_csv(evaluate(params, mcfg, split, "test", (5, 10, 20), graph), tmp_path / "lib.csv")
    assert (out / "report_test.csv").read_bytes() == (tmp_path / "lib.csv").read_bytes()
    assert (out / "config.txt").exists()


def test_valid_and_test_reports_differ(corpus, trained, tmp_path):
    for phase in ("valid", "test"):
        assert cli.main(["evaluate", "--dataset", str(corpus), "--checkpoint", str(trained / "model.ckpt"),
                         "--out", str(tmp_path), "--phase", phase]) == 0
    assert (tmp_path / "report_valid.csv").read_bytes() != (tmp_path / "report_test.csv").read_bytes()


def test_cutoff_rows_exact(corpus, trained, tmp_path):
    assert cli.main(["evaluate", "--dataset", str(corpus), "--checkpoint", str(trained / "model.ckpt"),
                     "--out", str(tmp_path), "--cutoffs", "5,10,20", "--grouped"]) == 0
    with open(tmp_path / "report_test.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {int(r["cutoff"]) for r in rows} == {5, 10, 20}
    assert {(r["metric"], r["cutoff"]) for r in rows if r["group"] == "all"} == {
        (m, str(n)) for m in ("hr", "ndcg") for n in (5, 10, 20)}
    assert {r["group"] for r in rows} - {"all"} <= set(BUCKETS)


def test_vocabulary_mismatch(trained, tmp_path, capsys):
    other = tmp_path / "small.txt"
    write_sequences(InteractionDataset.from_sequences([[1, 2, 3, 4]], item_count=5), other)
    assert cli.main(["evaluate", "--dataset", str(other), "--checkpoint", str(trained / "model.ckpt"),
                     "--out", str(tmp_path)]) != 0
    assert "vocabulary" in capsys.readouterr().err


# ---------------------------------------------------------------- baselines

def write(tmp_path, seqs, item_count):
    path = tmp_path / "seq.txt"
    write_sequences(InteractionDataset.from_sequences(seqs, item_count=item_count), path)
    return path


def read_report(path):
    with open(path) as fh:
        return {(r["metric"], int(r["cutoff"]), r["group"]): float(r["value"]) for r in csv.DictReader(fh)}


def test_pop_dominant_item_ranks_first(tmp_path):
    seqs = [[9, 1, 9, 2, 9], [3, 9, 4, 9, 5, 9], [9, 9, 6, 9]]
    path = write(tmp_path, seqs, 9)
    assert cli.main(["baseline", "pop", "--dataset", str(path), "--out", str(tmp_path), "--cutoffs", "1"]) == 0
    report = read_report(tmp_path / "report_pop_test.csv")
    assert report[("hr", 1, "all")] == 1.0


def test_transition_edgeless_graph_uses_tie_rule(tmp_path):
    # every training sequence has one item, so there are no edges
    seqs = [[3, 1, 2], [4, 2, 1], [5, 1, 3]]
    path = write(tmp_path, seqs, 5)
    assert cli.main(["baseline", "transition", "--dataset", str(path), "--out", str(tmp_path),
                     "--cutoffs", "1,2,5"]) == 0
    report = read_report(tmp_path / "report_transition_test.csv")
    # history {3,1} -> target 2 rank 1; {4,2} -> target 1 rank 1; {5,1} -> target 3 rank 2
    assert report[("hr", 1, "all")] == pytest.approx(2 / 3)
    assert report[("ndcg", 2, "all")] == pytest.approx((2 + 1 / np.log2(3)) / 3)


def test_unknown_baseline_usage_error(corpus):
    with pytest.raises(SystemExit) as exc:
        cli.main(["baseline", "lightgcn", "--dataset", str(corpus)])
    assert exc.value.code != 0


@pytest.mark.parametrize("seed", [0, 1])
def test_transition_grouped_hr_increases(tmp_path, seed):
    path = tmp_path / "syn.txt"
    write_sequences(generate(SyntheticConfig(seed=seed)), path)
    cutoffs = ",".join(str(n) for n in range(1, 21))
    assert cli.main(["baseline", "transition", "--dataset", str(path), "--out", str(tmp_path),
                     "--grouped", "--cutoffs", cutoffs]) == 0
    report = read_report(tmp_path / "report_transition_test.csv")
    for n in range(1, 21):
        hr = [report[("hr", n, b)] for b in BUCKETS]
        assert all(a <= b for a, b in zip(hr, hr[1:])), (n, hr)
    # small N floors the rare buckets at 0, large N saturates the frequent ones at 1
    hr = [report[("hr", 7, b)] for b in BUCKETS]
    assert all(a < b for a, b in zip(hr, hr[1:])), hr


# ---------------------------------------------------------------- analyze

def test_analyze_single_report_conserves_values(corpus, tmp_path):
    assert cli.main(["baseline", "pop", "--dataset", str(corpus), "--out", str(tmp_path), "--grouped"]) == 0
    src = tmp_path / "report_pop_test.csv"
    assert cli.main(["analyze", str(src), "--out", str(tmp_path / "a")]) == 0
    with open(tmp_path / "a" / "plot_data.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["method", "metric", "cutoff", "group", "value"]
    original = read_report(src)
    assert {(r["metric"], int(r["cutoff"]), r["group"]): float(r["value"]) for r in rows} == original
    assert len(rows) == len(original)
    assert (tmp_path / "a" / "config.txt").exists()


def test_analyze_two_labels_and_row_count(corpus, tmp_path):
    for name in ("pop", "transition"):
        assert cli.main(["baseline", name, "--dataset", str(corpus), "--out", str(tmp_path)]) == 0
    reports = [str(tmp_path / "report_pop_test.csv"), str(tmp_path / "report_transition_test.csv")]
    assert cli.main(["analyze", *reports, "--labels", "POP,IT", "--out", str(tmp_path / "a")]) == 0
    with open(tmp_path / "a" / "plot_data.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} == {"POP", "IT"}
    assert len(rows) == sum(len(read_report(r)) for r in reports)


def test_analyze_cutoff_mismatch(corpus, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["baseline", "pop", "--dataset", str(corpus), "--out", str(a), "--cutoffs", "5"])
    cli.main(["baseline", "pop", "--dataset", str(corpus), "--out", str(b), "--cutoffs", "10"])
    with pytest.raises(MergeError):
        cli.cmd_analyze([a / "report_pop_test.csv", b / "report_pop_test.csv"], tmp_path / "m")
    assert cli.main(["analyze", str(a / "report_pop_test.csv"), str(b / "report_pop_test.csv"),
                     "--out", str(tmp_path / "m")]) != 0
