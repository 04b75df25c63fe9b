import csv

import numpy as np
import pytest

from tgnrec.cli import main
from tgnrec.data import load_checkpoint, load_citation_dataset
from tgnrec.decoder import recommend

TINY = ["--set", "d_mem=8", "--set", "d_out=8", "--set", "d_dec=8", "--set", "d_time=4",
        "--set", "batch_size=50", "--set", "eval_negatives=9"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["-q", "synth", "--nodes", "120", "--seed", "7", "--out", str(out), "--mean-out-degree", "4",
                 "--feature-dim", "6"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "model.bin"
    assert main(["-q", "train", "--data", str(synth_dir), "--epochs", "2", "--seed", "1",
                 "--out-checkpoint", str(out)] + TINY) == 0
    return out


def test_synth_is_byte_identical(synth_dir, tmp_path):
    assert main(["-q", "synth", "--nodes", "120", "--seed", "7", "--out", str(tmp_path), "--mean-out-degree", "4",
                 "--feature-dim", "6"]) == 0
    for name in ("papers.jsonl", "embeddings.txt"):
        assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()


def test_synth_zero_nodes_is_usage_error(tmp_path):
    assert main(["synth", "--nodes", "0", "--out", str(tmp_path)]) == 2


def test_synth_dense_is_usage_error(tmp_path):
    assert main(["synth", "--nodes", "5", "--mean-out-degree", "9", "--out", str(tmp_path)]) == 2


def test_unknown_flag_and_missing_command():
    assert main(["train", "--bogus"]) == 2
    assert main([]) == 2


def test_synth_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["-q", "synth", "--nodes", "10", "--mean-out-degree", "2", "--out", str(blocker / "sub")]) == 1


def test_train_writes_history(trained):
    rows = list(csv.reader(open(trained.with_suffix(".history.csv"))))
    assert rows[0] == ["epoch", "loss", "val_mrr", "val_ap", "val_auc"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]


def test_train_missing_data(tmp_path):
    assert main(["-q", "train", "--data", str(tmp_path / "none"), "--out-checkpoint", str(tmp_path / "c")]) == 1


def test_train_bad_config(synth_dir, tmp_path):
    (tmp_path / "c.txt").write_text("aggregator = median\n")
    assert main(["-q", "train", "--data", str(synth_dir), "--config", str(tmp_path / "c.txt"),
                 "--out-checkpoint", str(tmp_path / "c.bin")]) == 2
    assert main(["-q", "train", "--data", str(synth_dir), "--set", "heads=3",
                 "--out-checkpoint", str(tmp_path / "c.bin")]) == 2


def test_train_zero_epochs_checkpoint(synth_dir, tmp_path):
    ck = tmp_path / "init.bin"
    assert main(["-q", "train", "--data", str(synth_dir), "--epochs", "0", "--out-checkpoint", str(ck)] + TINY) == 0
    g, _ = load_citation_dataset(synth_dir / "papers.jsonl", synth_dir / "embeddings.txt")
    assert load_checkpoint(ck, g).trainer.history == []


def test_config_file_and_flag_override(synth_dir, tmp_path):
    (tmp_path / "c.txt").write_text("epochs = 5  # overridden below\nd_mem = 8\nd_out = 8\nd_dec = 8\nd_time = 4\n")
    ck = tmp_path / "c.bin"
    assert main(["-q", "train", "--data", str(synth_dir), "--config", str(tmp_path / "c.txt"), "--epochs", "1",
                 "--out-checkpoint", str(ck)]) == 0
    g, _ = load_citation_dataset(synth_dir / "papers.jsonl", synth_dir / "embeddings.txt")
    cfg = load_checkpoint(ck, g).config
    assert cfg.epochs == 1 and cfg.d_mem == 8


def test_resume_matches_uninterrupted(synth_dir, trained, tmp_path):
    part = tmp_path / "part.bin"
    args = ["-q", "train", "--data", str(synth_dir), "--epochs", "2", "--seed", "1"] + TINY
    assert main(args + ["--max-steps", "5", "--out-checkpoint", str(part)]) == 0
    done = tmp_path / "done.bin"
    assert main(args + ["--resume", str(part), "--out-checkpoint", str(done)]) == 0
    g, _ = load_citation_dataset(synth_dir / "papers.jsonl", synth_dir / "embeddings.txt")
    a, b = load_checkpoint(done, g).trainer, load_checkpoint(trained, g).trainer
    assert [vars(h) for h in a.history] == [vars(h) for h in b.history]
    for k, p in a.model.parameters().items():
        assert p.data.tobytes() == b.model.parameters()[k].data.tobytes()


def test_eval_report_and_table(trained, tmp_path, capsys):
    out = tmp_path / "rep.txt"
    assert main(["-q", "eval", "--checkpoint", str(trained), "--K", "10,20,50", "--negatives", "9",
                 "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "mrr:" in printed and out.read_text() in printed + "\n"
    header = next(csv.reader(open(out.with_suffix(".csv"))))
    assert header[:11] == ["encoder", "initialization", "message", "aggregator", "MRR",
                           "Recall@10", "Recall@20", "Recall@50", "Precision@10", "Precision@20", "Precision@50"]


def test_eval_perfect_checkpoint(hub_checkpoint, tmp_path, capsys):
    path, _, _ = hub_checkpoint
    assert main(["-q", "eval", "--checkpoint", str(path), "--out", str(tmp_path / "r.txt")]) == 0
    assert "mrr: 1.000000" in capsys.readouterr().out


def test_eval_random_one_negative(trained, tmp_path, capsys):
    assert main(["-q", "eval", "--checkpoint", str(trained), "--model", "random", "--negatives", "1",
                 "--out", str(tmp_path / "r.txt")]) == 0
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("mrr:")][0]
    assert 0.65 < float(line.split()[1]) < 0.85


def test_eval_missing_checkpoint(tmp_path):
    assert main(["-q", "eval", "--checkpoint", str(tmp_path / "none.bin")]) == 1


def test_eval_corrupt_checkpoint(trained, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(trained.read_bytes()[:100])
    assert main(["-q", "eval", "--checkpoint", str(bad)]) == 1


def _parse_recs(text):
    return [(ln.split("\t")[1], float(ln.split("\t")[2])) for ln in text.splitlines() if not ln.startswith("#")]


def test_recommend_full_ranking_matches_oracle(synth_dir, trained, capsys):
    assert main(["-q", "recommend", "--checkpoint", str(trained), "--paper", "P00100", "--k", "1000"]) == 0
    recs = _parse_recs(capsys.readouterr().out)
    g, rep = load_citation_dataset(synth_dir / "papers.jsonl", synth_dir / "embeddings.txt")
    src = rep.index["P00100"]
    t = float(g.node_times[src])
    assert len(recs) == int(np.sum(g.node_times < t))
    model = load_checkpoint(trained, g).trainer.model
    model.reset_memory()
    stop = int(np.searchsorted(g.t, t))
    for b in g.batches(range(0, stop), model.config.eval_batch_size):
        model.observe(b)
    oracle = recommend(model, g, src, t, k=1000)
    assert [r[0] for r in recs] == [rep.id_map[c.node] for c in oracle]
    np.testing.assert_allclose([r[1] for r in recs], [c.probability for c in oracle], atol=1e-6)


def test_recommend_unknown_paper(trained):
    assert main(["-q", "recommend", "--checkpoint", str(trained), "--paper", "missing"]) == 1


def test_recommend_iso_date(trained, capsys):
    assert main(["-q", "recommend", "--checkpoint", str(trained), "--paper", "P00050", "--t", "2000-03-01",
                 "--k", "3"]) == 0
    out = capsys.readouterr().out
    assert "t=60" in out and len(_parse_recs(out)) == 3


def test_ablate_writes_eight_rows(synth_dir, tmp_path):
    out = tmp_path / "abl.csv"
    assert main(["-q", "ablate", "--data", str(synth_dir), "--epochs", "1", "--out", str(out), "--seed", "3"] + TINY) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 8
    assert {(r["message"], r["aggregator"], r["initialization"]) for r in rows} == {
        (m, a, i) for m in ("Id", "Sl") for a in ("mean", "last") for i in ("no", "yes")}


def test_ablate_bad_grid(synth_dir, tmp_path):
    assert main(["-q", "ablate", "--data", str(synth_dir), "--grid", "colour=red", "--out", str(tmp_path / "a")]) == 2
