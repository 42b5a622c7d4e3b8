import json
from importlib import resources

import numpy as np
import pytest

from reviewnet.checkpoint import load_checkpoint
from reviewnet.cli import main
from reviewnet.corpus import read_jsonl

TOY = resources.files("reviewnet") / "data" / "toy_code.jsonl"
SOURCE = "public int getSize() { return size; }"


def tiny_config(path, **train):
    cfg = {"task": "code", "seed": 1,
           "model": {"embed_dim": 4, "hidden_dim": 6, "attention_hidden": 5,
                     "reviewer": {"steps": 3, "variant": "attentive_output"}},
           "train": {"max_epochs": 2, "batch_size": 8, "max_len": 12, **train},
           "data": {"vocab_threshold": 1, "max_len": 12}}
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_config(root / "cfg.json")
    assert main(["preprocess", "--config", cfg, "--input", str(TOY), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


def test_preprocess_deterministic_and_stats(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "cfg.json")
    for out in ("a", "b"):
        assert main(["preprocess", "--config", cfg, "--input", str(TOY), "--out", str(tmp_path / out)]) == 0
    stats = json.loads(capsys.readouterr().out.splitlines()[-1])
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "vocab.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    n = {s: len(read_jsonl(tmp_path / "a" / f"{s}.jsonl")) for s in ("train", "dev", "test")}
    assert sum(n.values()) == 32
    assert abs(n["test"] - 3.2) <= 1 and abs(n["dev"] - 3.2) <= 1
    assert stats["train_instances"] == n["train"] and stats["vocab_size"] > 4


def test_preprocess_threshold_drops_rare_words(tmp_path, capsys):
    assert main(["preprocess", "--task", "code", "--input", str(TOY), "--out", str(tmp_path)]) == 0
    words = (tmp_path / "vocab.tsv").read_text().splitlines()
    counts = [int(line.split("\t")[2]) for line in words[4:]]
    assert counts and min(counts) >= 5


def test_train_writes_checkpoint_and_log(trained):
    ck = load_checkpoint(trained / "run" / "model.ckpt")
    assert ck.model.config.has_disc_head
    log = [json.loads(x) for x in (trained / "run" / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]


def test_train_log_is_reproducible(trained, tmp_path):
    cfg = tiny_config(tmp_path / "cfg.json")
    assert main(["train", "--config", cfg, "--data", str(trained / "data"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "train_log.jsonl").read_bytes() == (trained / "run" / "train_log.jsonl").read_bytes()


def test_train_lambda_zero_has_no_head(trained, tmp_path):
    cfg = tiny_config(tmp_path / "cfg.json", lam=0.0, max_epochs=1)
    assert main(["train", "--config", cfg, "--data", str(trained / "data"), "--out", str(tmp_path)]) == 0
    ck = load_checkpoint(tmp_path / "model.ckpt")
    assert not ck.model.config.has_disc_head
    assert not any(k.startswith("reviewer.disc") for k in ck.model.params)


def test_train_identity_reduction_rejected(trained, tmp_path, capsys):
    cfg = json.loads((trained / "cfg.json").read_text())
    cfg["model"]["reviewer"]["variant"] = "identity_reduction"
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    rc = main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(trained / "data"),
               "--out", str(tmp_path / "run")])
    assert rc == 2
    assert "T_r == T_x" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(trained, tmp_path, capsys):
    cfg = tiny_config(tmp_path / "cfg.json", lr=1e300, clip_norm=None, max_epochs=1)
    rc = main(["train", "--config", cfg, "--data", str(trained / "data"), "--out", str(tmp_path / "run")])
    assert rc == 3
    assert "numeric failure" in capsys.readouterr().err


@pytest.mark.parametrize("metric", ["loglik", "cs_k", "bleu4"])
def test_evaluate(trained, tmp_path, metric):
    out = tmp_path / "r.json"
    rc = main(["evaluate", "--checkpoint", str(trained / "run" / "model.ckpt"),
               "--data", str(trained / "data" / "train.jsonl"), "--metric", metric, "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["metric"] == metric
    if metric == "loglik":
        assert rep["loglik"] < 0
    elif metric == "cs_k":
        avg = [rep["average"][str(k)] for k in range(1, 6)]
        assert all(a <= b for a, b in zip(avg, avg[1:]))
    else:
        assert 0.0 <= rep["bleu"] <= 1.0


def test_generate_beam_one_is_greedy_and_deterministic(trained, capsys):
    ckpt = str(trained / "run" / "model.ckpt")
    outs = []
    for beam in ("1", "1", "3"):
        assert main(["generate", "--checkpoint", ckpt, "--input", SOURCE, "--beam", beam]) == 0
        outs.append(capsys.readouterr().out.strip())
    assert outs[0] == outs[1]
    ck = load_checkpoint(ckpt)
    ids = ck.model.greedy(ck.vocab.encode(["public", "int", "get", "size", "return", "size"]), 12)
    assert outs[0] == " ".join(ck.vocab.decode(ids))


def test_complete(trained, capsys):
    rc = main(["complete", "--checkpoint", str(trained / "run" / "model.ckpt"), "--input", SOURCE,
               "--comment", "Returns the", "--prefix", "n", "--k", "3"])
    assert rc == 0
    rep = json.loads(capsys.readouterr().out)
    lps = [c["logprob"] for c in rep["completions"]]
    assert all(c["word"].startswith("n") for c in rep["completions"]) and lps == sorted(lps, reverse=True)


def test_dump_attention(trained, tmp_path):
    out = tmp_path / "att.json"
    rc = main(["dump-attention", "--checkpoint", str(trained / "run" / "model.ckpt"), "--input", SOURCE,
               "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    ck = load_checkpoint(trained / "run" / "model.ckpt")
    assert rep["review_steps"] == 3 and len(rep["steps"]) == 3
    for step in rep["steps"]:
        assert abs(sum(step["weights"]) - 1) <= 1e-9
        assert len(step["weights"]) == len(rep["input_tokens"])
        scores = np.array(step["scores"])
        resorted = sorted(range(4, len(scores)), key=lambda i: (-scores[i], i))[:5]
        assert step["top_words"] == [ck.vocab.words[i] for i in resorted]


def test_dump_attention_without_disc_head(trained, tmp_path):
    cfg = tiny_config(tmp_path / "cfg.json", lam=0.0, max_epochs=1)
    assert main(["train", "--config", cfg, "--data", str(trained / "data"), "--out", str(tmp_path)]) == 0
    assert main(["dump-attention", "--checkpoint", str(tmp_path / "model.ckpt"), "--input", SOURCE,
                 "--out", str(tmp_path / "a.json")]) == 0
    rep = json.loads((tmp_path / "a.json").read_text())
    assert all("top_words" not in s and len(s["weights"]) > 0 for s in rep["steps"])


def test_synth(tmp_path):
    args = ["synth", "--task", "reverse", "--count", "5", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a.jsonl")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    for r in read_jsonl(tmp_path / "a.jsonl"):
        assert r["target"].split() == r["source"].split()[::-1]


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["preprocess", "--task", "code", "--input", str(tmp_path / "missing.jsonl"),
                 "--out", str(tmp_path)]) == 2
    (tmp_path / "empty.jsonl").write_text("")
    assert main(["preprocess", "--task", "code", "--input", str(tmp_path / "empty.jsonl"),
                 "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    assert main(["generate", "--checkpoint", str(tmp_path / "bad.ckpt"), "--input", SOURCE]) == 2
    (tmp_path / "cfg.json").write_text('{"nonsense": 1}')
    assert main(["preprocess", "--config", str(tmp_path / "cfg.json"), "--input", str(TOY),
                 "--out", str(tmp_path)]) == 2
