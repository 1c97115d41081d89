"""End-to-end command tests: exit codes, file outputs, determinism, and
agreement between CLI reports and library results."""

import json
from pathlib import Path

import pytest

from causalspan.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from causalspan.corpus import read_corpus
from causalspan.evaluation import evaluate
from causalspan.inference import read_predictions
from causalspan.params import ModelParams
from causalspan.reporting import smoothed
from causalspan.synth import make_corpus, write_fincausal

RAW_FIXTURE = """Index;Text;Cause;Effect
0007.1;Profits fell because sales dropped and costs rose.;sales dropped;Profits fell
0007.2;Profits fell because sales dropped and costs rose.;costs rose;Profits fell
0009;Margins improved so the outlook brightened.;Margins improved;the outlook brightened
"""


@pytest.fixture
def raw_file(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text(RAW_FIXTURE, encoding="utf-8")
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestPrepare:
    def test_three_rows_two_segments_zero_skips(self, tmp_path, raw_file):
        out = tmp_path / "prep"
        assert run("prepare", "--input-file", raw_file, "--out-dir", out) == EXIT_OK
        report = json.loads((out / "ingest_report.json").read_text())
        assert report["rows"] == 3
        assert report["segments"] == 2
        assert report["examples_kept"] == 2
        assert report["skipped_rows"] == 0
        examples = read_corpus(out / "corpus.jsonl")
        assert [len(ex.gold) for ex in examples] == [2, 1]
        assert (out / "config.txt").exists()

    def test_misaligned_row_recorded_but_exit_zero(self, tmp_path, raw_file):
        text = RAW_FIXTURE + "0011;Costs rose again.;phrase not present;Costs rose\n"
        bad = tmp_path / "bad.csv"
        bad.write_text(text, encoding="utf-8")
        out = tmp_path / "prep"
        assert run("prepare", "--input-file", bad, "--out-dir", out) == EXIT_OK
        report = json.loads((out / "ingest_report.json").read_text())
        assert report["skipped_rows"] == 1
        assert report["alignment_failures"] == 1

    def test_empty_file_exits_nonzero(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("", encoding="utf-8")
        code = run("prepare", "--input-file", empty, "--out-dir", tmp_path / "o")
        assert code == EXIT_DATA


@pytest.fixture
def corpus_file(tmp_path):
    examples = make_corpus(12, seed=5)
    raw = tmp_path / "synth.csv"
    write_fincausal(examples, raw)
    out = tmp_path / "prep"
    assert run("prepare", "--input-file", raw, "--out-dir", out) == EXIT_OK
    return out / "corpus.jsonl"


TRAIN_ARGS = ("--context-dim", 8, "--pos-dim", 4, "--epochs", 2,
              "--batch-size", 8, "--seed", 3)


class TestTrain:
    def test_zero_lr_checkpoint_equals_initialization(self, tmp_path, corpus_file):
        out = tmp_path / "run"
        code = run("train", "--corpus-file", corpus_file, "--out-dir", out,
                   "--ordering", "CF", "--learning-rate", 0, *TRAIN_ARGS)
        assert code == EXIT_OK
        params, _ = ModelParams.load(out / "checkpoint.ckpt")
        reference = ModelParams(params.config, "CF", seed=3)
        assert params.checksum() == reference.checksum()

    def test_seeded_repeat_identical_checkpoint_bytes(self, tmp_path, corpus_file):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run("train", "--corpus-file", corpus_file, "--out-dir", out,
                       "--ordering", "CF", *TRAIN_ARGS) == EXIT_OK
            outs.append((out / "checkpoint.ckpt").read_bytes())
        assert outs[0] == outs[1]

    def test_history_and_loss_curve_written(self, tmp_path, corpus_file):
        out = tmp_path / "run"
        assert run("train", "--corpus-file", corpus_file, "--out-dir", out,
                   "--ordering", "EF", *TRAIN_ARGS) == EXIT_OK
        lines = (out / "history.tsv").read_text().splitlines()
        assert lines[0] == "epoch\tloss\tgrad_norm"
        assert len(lines) == 3  # header + 2 epochs
        assert (out / "loss_curve.png").stat().st_size > 0
        assert (out / "vocab.txt").exists()

    def test_both_ordering_rejected_for_train(self, tmp_path, corpus_file):
        code = run("train", "--corpus-file", corpus_file, "--out-dir", tmp_path / "x",
                   "--ordering", "BOTH", *TRAIN_ARGS)
        assert code == EXIT_USAGE

    def test_smoothed_loss_non_increasing_early(self, tmp_path):
        examples = make_corpus(50, seed=11)
        raw = tmp_path / "r.csv"
        write_fincausal(examples, raw)
        prep = tmp_path / "p"
        assert run("prepare", "--input-file", raw, "--out-dir", prep) == EXIT_OK
        out = tmp_path / "run"
        assert run("train", "--corpus-file", prep / "corpus.jsonl", "--out-dir", out,
                   "--ordering", "CF", "--context-dim", 16, "--pos-dim", 8,
                   "--epochs", 20, "--batch-size", 25, "--seed", 4) == EXIT_OK
        rows = (out / "history.tsv").read_text().splitlines()[1:]
        losses = [float(r.split("\t")[1]) for r in rows]
        curve = smoothed(losses, window=5)
        assert all(b <= a + 1e-9 for a, b in zip(curve, curve[1:]))


@pytest.fixture
def trained(tmp_path, corpus_file):
    out = tmp_path / "run"
    assert run("train", "--corpus-file", corpus_file, "--out-dir", out,
               "--ordering", "CF", *TRAIN_ARGS) == EXIT_OK
    return out


class TestPredict:
    def test_empty_corpus_gives_empty_file(self, tmp_path, corpus_file, trained):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        out = tmp_path / "pred0"
        assert run("predict", "--corpus-file", empty,
                   "--checkpoint-file", trained / "checkpoint.ckpt",
                   "--out-dir", out) == EXIT_OK
        assert (out / "predictions.jsonl").read_text() == ""

    def test_deterministic_bytes(self, tmp_path, corpus_file, trained):
        blobs = []
        for name in ("p1", "p2"):
            out = tmp_path / name
            assert run("predict", "--corpus-file", corpus_file,
                       "--checkpoint-file", trained / "checkpoint.ckpt",
                       "--out-dir", out) == EXIT_OK
            blobs.append((out / "predictions.jsonl").read_bytes())
        assert blobs[0] == blobs[1]

    def test_round_trip_and_bounds(self, tmp_path, corpus_file, trained):
        out = tmp_path / "pred"
        assert run("predict", "--corpus-file", corpus_file,
                   "--checkpoint-file", trained / "checkpoint.ckpt",
                   "--out-dir", out) == EXIT_OK
        examples = {ex.segment.id: ex for ex in read_corpus(corpus_file)}
        predictions = read_predictions(out / "predictions.jsonl")
        assert set(predictions) == set(examples)
        for seg_id, tuples in predictions.items():
            n = examples[seg_id].segment.n_tokens
            for tup in tuples:
                assert 1 <= tup.c_s <= tup.c_e <= n
                assert 1 <= tup.e_s <= tup.e_e <= n

    def test_vocab_hash_mismatch_rejected(self, tmp_path, corpus_file, trained):
        vocab_lines = (trained / "vocab.txt").read_text().splitlines()
        vocab_lines[-1] = vocab_lines[-1] + "X"
        tampered = tmp_path / "tампered.txt"
        tampered.write_text("\n".join(vocab_lines) + "\n", encoding="utf-8")
        code = run("predict", "--corpus-file", corpus_file,
                   "--checkpoint-file", trained / "checkpoint.ckpt",
                   "--vocab-file", tampered, "--out-dir", tmp_path / "pp")
        assert code == EXIT_DATA


class TestEval:
    def test_gold_vs_gold_is_perfect(self, tmp_path, corpus_file):
        examples = read_corpus(corpus_file)
        from causalspan.inference import write_predictions

        gold_pred = {ex.segment.id: list(ex.gold) for ex in examples}
        pred_path = tmp_path / "gold_pred.jsonl"
        write_predictions(examples, gold_pred, pred_path)
        out = tmp_path / "ev"
        assert run("eval", "--corpus-file", corpus_file,
                   "--predictions-file", pred_path, "--out-dir", out) == EXIT_OK
        report = json.loads((out / "eval_report.json").read_text())
        assert report["token_f1_weighted"] == 1.0
        assert report["em_f1"] == 1.0

    def test_empty_predictions_report(self, tmp_path, corpus_file):
        examples = read_corpus(corpus_file)
        from causalspan.inference import write_predictions

        pred_path = tmp_path / "none.jsonl"
        write_predictions(examples, {ex.segment.id: [] for ex in examples}, pred_path)
        out = tmp_path / "ev"
        assert run("eval", "--corpus-file", corpus_file,
                   "--predictions-file", pred_path, "--out-dir", out) == EXIT_OK
        report = json.loads((out / "eval_report.json").read_text())
        assert report["em_f1"] == 0.0
        assert report["token_classes"]["C"]["recall"] == 0.0
        assert (out / "eval_scores.png").stat().st_size > 0

    def test_cli_report_equals_library_result(self, tmp_path, corpus_file, trained):
        pred_out = tmp_path / "pred"
        assert run("predict", "--corpus-file", corpus_file,
                   "--checkpoint-file", trained / "checkpoint.ckpt",
                   "--out-dir", pred_out) == EXIT_OK
        out = tmp_path / "ev"
        assert run("eval", "--corpus-file", corpus_file,
                   "--predictions-file", pred_out / "predictions.jsonl",
                   "--out-dir", out) == EXIT_OK
        cli_report = json.loads((out / "eval_report.json").read_text())
        examples = read_corpus(corpus_file)
        lib_report = evaluate(examples, read_predictions(pred_out / "predictions.jsonl"))
        assert cli_report == lib_report.to_dict()


CV_ARGS = ("--context-dim", 8, "--pos-dim", 4, "--epochs", 2,
           "--batch-size", 8, "--seed", 3, "--k", 3)


class TestCrossval:
    def test_fold_rows_mean_std_and_significance_row(self, tmp_path, corpus_file):
        out = tmp_path / "cv"
        assert run("crossval", "--corpus-file", corpus_file, "--out-dir", out,
                   *CV_ARGS) == EXIT_OK
        lines = (out / "crossval.tsv").read_text().splitlines()
        body = [line.split("\t") for line in lines[1:]]
        for ordering in ("CF", "EF"):
            rows = [r for r in body if r[0] == ordering]
            assert [r[1] for r in rows] == ["0", "1", "2", "mean", "std"]
        assert body[-1][0] == "CF_vs_EF"
        payload = json.loads((out / "crossval.json").read_text())
        assert "significance" in payload
        assert (out / "fold_scores.png").stat().st_size > 0

    def test_single_ordering_has_no_significance_row(self, tmp_path, corpus_file):
        out = tmp_path / "cv1"
        assert run("crossval", "--corpus-file", corpus_file, "--out-dir", out,
                   "--ordering", "CF", *CV_ARGS) == EXIT_OK
        payload = json.loads((out / "crossval.json").read_text())
        assert "significance" not in payload
        assert list(payload["orderings"]) == ["CF"]

    def test_seeded_repeat_byte_identical(self, tmp_path, corpus_file):
        blobs = []
        for name in ("cva", "cvb"):
            out = tmp_path / name
            assert run("crossval", "--corpus-file", corpus_file, "--out-dir", out,
                       "--ordering", "CF", *CV_ARGS) == EXIT_OK
            blobs.append(tuple_files(out))
        assert blobs[0] == blobs[1]

    def test_parallel_jobs_match_sequential(self, tmp_path, corpus_file):
        seq = tmp_path / "seq"
        par = tmp_path / "par"
        assert run("crossval", "--corpus-file", corpus_file, "--out-dir", seq,
                   "--ordering", "CF", *CV_ARGS) == EXIT_OK
        assert run("crossval", "--corpus-file", corpus_file, "--out-dir", par,
                   "--ordering", "CF", "--jobs", 2, *CV_ARGS) == EXIT_OK
        assert (seq / "crossval.tsv").read_bytes() == (par / "crossval.tsv").read_bytes()


class TestConfigHandling:
    def test_config_file_with_flag_override(self, tmp_path, raw_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed=9\nepochs=1\n", encoding="utf-8")
        out = tmp_path / "o"
        assert run("prepare", "--config", cfg, "--input-file", raw_file,
                   "--out-dir", out) == EXIT_OK
        snapshot = (out / "config.txt").read_text()
        assert "seed=9" in snapshot
        assert "epochs=1" in snapshot

    def test_unknown_config_key_rejected(self, tmp_path, raw_file):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed=11\n", encoding="utf-8")
        code = run("prepare", "--config", cfg, "--input-file", raw_file,
                   "--out-dir", tmp_path / "o")
        assert code == EXIT_USAGE

    def test_flag_beats_config_file(self, tmp_path, raw_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed=9\n", encoding="utf-8")
        out = tmp_path / "o"
        assert run("prepare", "--config", cfg, "--input-file", raw_file,
                   "--out-dir", out, "--seed", 123) == EXIT_OK
        assert "seed=123" in (out / "config.txt").read_text()

    def test_snapshot_written_next_to_outputs(self, tmp_path, raw_file):
        out = tmp_path / "o"
        assert run("prepare", "--input-file", raw_file, "--out-dir", out) == EXIT_OK
        snapshot = (out / "config.txt").read_text()
        for key in ("ordering=", "learning_rate=", "k=", "dedup="):
            assert key in snapshot


def tuple_files(out_dir: Path) -> tuple:
    # config.txt embeds the (deliberately different) out_dir path, so the
    # byte-for-byte comparison covers every other artifact.
    return tuple(
        (p.name, p.read_bytes())
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name != "config.txt"
    )
