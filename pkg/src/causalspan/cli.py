"""Command-line interface: prepare, train, predict, eval, crossval.

Configuration is a flat key=value namespace. Values resolve in order:
built-in defaults, then a --config file, then explicit command-line flags
(later wins). Unknown keys in a config file are rejected. Every command
writes the fully resolved configuration next to its outputs and writes all
outputs atomically, so reruns with the same inputs and seed are
byte-identical.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

from . import reporting
from .corpus import parse_fincausal_file, read_corpus, write_corpus
from .encoder import EncoderConfig, Vocabulary, read_precomputed
from .errors import (
    CausalSpanError,
    ConfigError,
    DataError,
    DegenerateVariance,
    MissingSegment,
    NumericError,
)
from .evaluation import crossval, evaluate, paired_significance
from .inference import DecodeConfig, predict_corpus, read_predictions, write_predictions
from .params import ModelParams
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    input_file: str = ""
    corpus_file: str = ""
    predictions_file: str = ""
    checkpoint_file: str = ""
    vocab_file: str = ""
    vectors_file: str = ""
    out_dir: str = ""
    ordering: str = "CF"
    context_dim: int = 64
    pos_dim: int = 32
    recurrent: bool = True
    min_count: int = 1
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 16
    grad_clip_norm: float = 5.0
    seed: int = 0
    max_decode_steps: int = 8
    max_span_len: int = 0  # 0 means unlimited
    dedup: bool = True
    k: int = 5
    jobs: int = 1
    checkpoint_format: str = "binary"

    def snapshot(self) -> str:
        pairs = [(f.name, getattr(self, f.name)) for f in fields(self)]
        return "".join(f"{name}={_format_value(value)}\n" for name, value in sorted(pairs))

    def train_config(self, ordering: str) -> TrainConfig:
        return TrainConfig(
            ordering=ordering,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            grad_clip_norm=self.grad_clip_norm,
            seed=self.seed,
            max_decode_steps=self.max_decode_steps,
            min_count=self.min_count,
            encoder=EncoderConfig(
                context_dim=self.context_dim,
                pos_dim=self.pos_dim,
                recurrent=self.recurrent,
            ),
        )

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            max_steps=self.max_decode_steps,
            max_span_len=self.max_span_len if self.max_span_len > 0 else None,
            dedup=self.dedup,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {key}={raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {kind}")
    return raw


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
    return values


def resolve_config(args: argparse.Namespace, command_defaults: dict) -> RunConfig:
    config = replace(RunConfig(), **command_defaults)
    if getattr(args, "config", None):
        config = replace(config, **read_config_file(args.config))
    overrides = {}
    for key in _FIELD_TYPES:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    config = replace(config, **overrides)
    if config.ordering not in ("CF", "EF", "BOTH"):
        raise ConfigError(f"ordering must be CF, EF or BOTH, got {config.ordering!r}")
    return config


def _log(message: str):
    print(message, file=sys.stderr)


def _prepare_out_dir(config: RunConfig):
    if not config.out_dir:
        raise ConfigError("out_dir is required")
    os.makedirs(config.out_dir, exist_ok=True)
    reporting.write_text_atomic(os.path.join(config.out_dir, "config.txt"), config.snapshot())


def _out(config: RunConfig, name: str) -> str:
    return os.path.join(config.out_dir, name)


def _load_vectors(config: RunConfig, examples):
    if not config.vectors_file:
        return None
    from .encoder import _check_precomputed

    records = read_precomputed(config.vectors_file)
    enc = EncoderConfig(
        context_dim=config.context_dim,
        pos_dim=config.pos_dim,
        vocab_size=1,
        recurrent=config.recurrent,
    )
    vectors = {}
    for ex in examples:
        seg = ex.segment
        if seg.id not in records:
            raise MissingSegment(f"{config.vectors_file}: no vectors for segment {seg.id}")
        vectors[seg.id] = _check_precomputed(seg, records[seg.id], enc)
    return vectors


# ---------------------------------------------------------------------------
# Commands.

def cmd_prepare(config: RunConfig) -> int:
    if not config.input_file:
        raise ConfigError("prepare requires input_file")
    _prepare_out_dir(config)
    examples, report = parse_fincausal_file(config.input_file)
    corpus_path = _out(config, "corpus.jsonl")
    write_corpus(examples, corpus_path)
    reporting.write_json_atomic(_out(config, "ingest_report.json"), report.to_dict())
    _log(
        f"prepare: {report.rows} rows -> {report.examples_kept} examples "
        f"({report.skipped_rows} skipped, {report.alignment_failures} alignment failures)"
    )
    if report.examples_kept == 0:
        _log("prepare: no usable examples")
        return EXIT_DATA
    return EXIT_OK


def cmd_train(config: RunConfig) -> int:
    if not config.corpus_file:
        raise ConfigError("train requires corpus_file")
    if config.ordering == "BOTH":
        raise ConfigError("train requires a single ordering (CF or EF)")
    _prepare_out_dir(config)
    examples = read_corpus(config.corpus_file)
    vectors = _load_vectors(config, examples)
    result = train(examples, config.train_config(config.ordering),
                   precomputed_map=vectors, log=_log)
    result.vocab.save(_out(config, "vocab.txt"))
    result.params.save(
        _out(config, "checkpoint.ckpt"),
        vocab_hash=result.vocab.hash(),
        fmt=config.checkpoint_format,
    )
    reporting.write_text_atomic(_out(config, "history.tsv"),
                                reporting.history_table(result.history))
    reporting.save_history_figure(result.history, _out(config, "loss_curve.png"))
    _log(f"train: checkpoint {result.params.checksum()[:12]} "
         f"({result.params.n_params()} parameters)")
    return EXIT_OK


def cmd_predict(config: RunConfig) -> int:
    if not (config.corpus_file and config.checkpoint_file):
        raise ConfigError("predict requires corpus_file and checkpoint_file")
    _prepare_out_dir(config)
    examples = read_corpus(config.corpus_file)
    params, header = ModelParams.load(config.checkpoint_file)
    vocab_path = config.vocab_file or os.path.join(
        os.path.dirname(config.checkpoint_file), "vocab.txt"
    )
    vocab = Vocabulary.load(vocab_path)
    if header.get("vocab_hash") and header["vocab_hash"] != vocab.hash():
        raise DataError(
            f"vocabulary {vocab_path} does not match the checkpoint's vocab hash"
        )
    vectors = _load_vectors(config, examples)
    predictions, errors = predict_corpus(
        examples, params, config=config.decode_config(), vocab=vocab,
        precomputed_map=vectors,
    )
    write_predictions(examples, predictions, _out(config, "predictions.jsonl"))
    for seg_id, message in sorted(errors.items()):
        _log(f"predict: {seg_id}: {message}")
    _log(f"predict: {len(predictions)} segments, "
         f"{sum(len(v) for v in predictions.values())} tuples")
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    if not (config.corpus_file and config.predictions_file):
        raise ConfigError("eval requires corpus_file and predictions_file")
    _prepare_out_dir(config)
    examples = read_corpus(config.corpus_file)
    predictions = read_predictions(config.predictions_file)
    report = evaluate(examples, predictions)
    reporting.write_json_atomic(_out(config, "eval_report.json"), report.to_dict())
    reporting.write_text_atomic(_out(config, "eval_report.tsv"), reporting.eval_table(report))
    reporting.save_eval_figure(report, _out(config, "eval_scores.png"))
    _log(f"eval: token_f1={report.token_f1_weighted:.4f} em_f1={report.em_f1:.4f}")
    return EXIT_OK


def cmd_crossval(config: RunConfig) -> int:
    if not config.corpus_file:
        raise ConfigError("crossval requires corpus_file")
    _prepare_out_dir(config)
    examples = read_corpus(config.corpus_file)
    vectors = _load_vectors(config, examples)
    orderings = ("CF", "EF") if config.ordering == "BOTH" else (config.ordering,)
    results = []
    for ordering in orderings:
        results.append(
            crossval(
                examples, config.k, config.seed, config.train_config(ordering),
                config.decode_config(), precomputed_map=vectors,
                jobs=config.jobs, log=_log,
            )
        )
    significance = None
    degenerate = None
    if len(results) == 2:
        try:
            significance = paired_significance(
                results[0].fold_scores("token_f1_weighted"),
                results[1].fold_scores("token_f1_weighted"),
            )
            _log(f"crossval: CF vs EF t={significance.t_statistic:.4f} "
                 f"p={significance.p_value:.6f}")
        except DegenerateVariance as err:
            degenerate = str(err)
            _log(f"crossval: significance degenerate: {err}")
    reporting.write_text_atomic(
        _out(config, "crossval.tsv"),
        reporting.crossval_table(results, significance, degenerate),
    )
    reporting.write_json_atomic(
        _out(config, "crossval.json"),
        reporting.crossval_json(results, significance, degenerate),
    )
    reporting.save_fold_scores_figure(results, _out(config, "fold_scores.png"))
    for result in results:
        _log(f"crossval[{result.ordering}]: token_f1 "
             f"{result.mean['token_f1_weighted']:.4f} ± {result.std['token_f1_weighted']:.4f}, "
             f"em_f1 {result.mean['em_f1']:.4f} ± {result.std['em_f1']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing.

_COMMANDS = {
    "prepare": (cmd_prepare, {}),
    "train": (cmd_train, {}),
    "predict": (cmd_predict, {}),
    "eval": (cmd_eval, {}),
    "crossval": (cmd_crossval, {"ordering": "BOTH"}),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalspan",
        description="Cause/effect span extraction: corpus prep, training, "
                    "decoding and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="flat key=value config file")
        for key, kind in _FIELD_TYPES.items():
            flag = "--" + key.replace("_", "-")
            if kind == "bool":
                p.add_argument(flag, dest=key, default=None,
                               type=lambda raw, k=key: _parse_value(k, raw),
                               metavar="BOOL")
            elif kind == "int":
                p.add_argument(flag, dest=key, default=None, type=int)
            elif kind == "float":
                p.add_argument(flag, dest=key, default=None, type=float)
            else:
                p.add_argument(flag, dest=key, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command, defaults = _COMMANDS[args.command]
    try:
        config = resolve_config(args, defaults)
        return command(config)
    except ConfigError as err:
        _log(f"config error: {err}")
        return EXIT_USAGE
    except DataError as err:
        _log(f"data error: {err}")
        return EXIT_DATA
    except NumericError as err:
        _log(f"numeric failure: {err}")
        return EXIT_NUMERIC
    except CausalSpanError as err:
        _log(f"error: {err}")
        return EXIT_DATA
    except OSError as err:
        _log(f"io error: {err}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
