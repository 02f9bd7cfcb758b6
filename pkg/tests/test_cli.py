import numpy as np
import pytest

from coattrank.cli import main, parse_config_text, UsageError
from coattrank.corpus import load_dataset
from coattrank.ranking import read_rankings

TINY_TRAIN = ["--hidden", "8", "--lstm-layers", "1", "--dropout", "0", "--epochs", "2",
              "--batch-size", "8", "--threads", "1"]


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_synth")
    assert main(["synth", "--out-dir", str(out), "--n-queries", "24", "--n-dev", "6",
                 "--dim", "8", "--seed", "2"]) == 0
    return out


def bank_flags(d):
    return ["--w2v", str(d / "w2v.txt"), "--glove", str(d / "glove.txt"),
            "--fasttext", str(d / "fasttext.txt"), "--subwords", str(d / "subwords.txt")]


@pytest.fixture(scope="module")
def trained(small, tmp_path_factory):
    run = tmp_path_factory.mktemp("cli_run")
    code = main(["train", "--train", str(small / "train.tsv"), "--dev", str(small / "dev.tsv"),
                 "--out-dir", str(run), *bank_flags(small), *TINY_TRAIN])
    assert code == 0
    return run


class TestSynth:
    def test_deterministic(self, small, tmp_path):
        main(["synth", "--out-dir", str(tmp_path), "--n-queries", "24", "--n-dev", "6",
              "--dim", "8", "--seed", "2"])
        for name in ("train.tsv", "dev.tsv", "w2v.txt", "glove.txt", "fasttext.txt"):
            assert (tmp_path / name).read_bytes() == (small / name).read_bytes()

    def test_structure_and_overlap(self, small):
        samples = list(load_dataset(small / "train.tsv"))
        assert len(samples) == 24
        for s in samples:
            assert s.n_passages == 10 and s.gold_index is not None
            q = set(s.query_tokens)
            overlaps = [len(q & set(p)) for p in s.passages]
            assert overlaps[s.gold_index] >= 3
            assert all(o <= 1 for i, o in enumerate(overlaps) if i != s.gold_index)


class TestBuildVocab:
    def test_default_threshold_and_rerun(self, small, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        assert main(["build-vocab", "--data", str(small / "train.tsv"), "--out", str(a)]) == 0
        main(["build-vocab", "--data", str(small / "train.tsv"), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()
        freqs = [int(line.split("\t")[2]) for line in a.read_text().splitlines()[1:]]
        assert freqs and min(freqs) >= 3

    def test_empty_corpus(self, tmp_path):
        (tmp_path / "empty.tsv").write_text("")
        out = tmp_path / "v.tsv"
        assert main(["build-vocab", "--data", str(tmp_path / "empty.tsv"), "--out", str(out)]) == 0
        assert out.exists()


class TestTrainRankEval:
    def test_artifacts(self, trained):
        for name in ("config.txt", "vocab.tsv", "stats.txt", "checkpoint.bin",
                     "checkpoint_epoch001.bin", "checkpoint_epoch002.bin"):
            assert (trained / name).exists(), name
        epochs = [int(line.split("\t")[0]) for line in (trained / "train.log").read_text().splitlines()]
        assert epochs == [0, 1, 2]

    def test_greedy_matches_exact(self, small, trained, tmp_path):
        common = ["rank", "--data", str(small / "dev.tsv"), "--checkpoint",
                  str(trained / "checkpoint.bin"), *bank_flags(small)]
        assert main([*common, "--out", str(tmp_path / "g.tsv")]) == 0
        assert main([*common, "--out", str(tmp_path / "e.tsv"), "--exact", "--paranoid"]) == 0
        assert (tmp_path / "g.tsv").read_bytes() == (tmp_path / "e.tsv").read_bytes()
        assert len(read_rankings(tmp_path / "g.tsv")) == 6

    def test_eval_perfect(self, small, tmp_path, capsys):
        lines = []
        for s in load_dataset(small / "dev.tsv"):
            order = [s.gold_index] + [i for i in range(10) if i != s.gold_index]
            rank = np.empty(10, int)
            rank[order] = np.arange(1, 11)
            lines.append(s.query_id + "\t" + ",".join(map(str, rank)))
        (tmp_path / "r.tsv").write_text("\n".join(lines) + "\n")
        capsys.readouterr()
        assert main(["eval", "--rankings", str(tmp_path / "r.tsv"),
                     "--data", str(small / "dev.tsv")]) == 0
        assert capsys.readouterr().out.strip() == "1.000000"

    def test_bm25_method(self, small, tmp_path):
        assert main(["rank", "--method", "bm25", "--data", str(small / "dev.tsv"),
                     "--out", str(tmp_path / "b.tsv")]) == 0
        assert len(read_rankings(tmp_path / "b.tsv")) == 6

    def test_config_file_with_override(self, small, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"train={small / 'train.tsv'}\nhidden=4\nepochs=1  # short\n"
                       "lstm_layers=1\nbatch_size=32\nkeep_epoch_checkpoints=false\n")
        run = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--epochs", "0", "--out-dir", str(run),
                     *bank_flags(small)]) == 0
        text = (run / "config.txt").read_text()
        assert "hidden=4\n" in text and "epochs=0\n" in text
        assert not list(run.glob("checkpoint_epoch*"))


class TestExitCodes:
    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--hidden", "many"])
        assert exc.value.code == 1

    def test_missing_required_setting(self, tmp_path):
        assert main(["train", "--out-dir", str(tmp_path)]) == 1

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("hiden=4\n")
        assert main(["train", "--config", str(cfg)]) == 1
        with pytest.raises(UsageError, match="unknown config key 'hiden'"):
            parse_config_text("hiden=4")

    def test_data_error(self, small, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("q1\tquery\tpassage\t1\n")
        assert main(["build-vocab", "--data", str(bad), "--out", str(tmp_path / "v")]) == 2
        assert main(["eval", "--rankings", str(tmp_path / "none.tsv"),
                     "--data", str(small / "dev.tsv")]) == 2

    def test_corrupt_checkpoint(self, small, trained, tmp_path):
        broken = tmp_path / "checkpoint.bin"
        broken.write_bytes((trained / "checkpoint.bin").read_bytes() + b"x")
        for name in ("vocab.tsv", "stats.txt"):
            (tmp_path / name).write_bytes((trained / name).read_bytes())
        assert main(["rank", "--data", str(small / "dev.tsv"), "--out", str(tmp_path / "r"),
                     "--checkpoint", str(broken), *bank_flags(small)]) == 2

    def test_gradcheck_pass_and_fail(self, capsys):
        assert main(["gradcheck", "--hidden", "3", "--embed-dim", "4", "--max-query-len", "2",
                     "--max-doc-len", "3"]) == 0
        assert "out_W" in capsys.readouterr().out
        assert main(["gradcheck", "--hidden", "3", "--embed-dim", "4", "--max-query-len", "2",
                     "--max-doc-len", "3", "--step", "0.5", "--threshold", "1e-12"]) == 3
