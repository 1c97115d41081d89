"""Span-level scoring: token-level F1 over {C, E, O} labels, exact-match F1
over whole tuples, k-fold cross-validation, and the paired two-tailed t-test
between two systems' fold scores.

Scoring conventions (fixed here so results are reproducible):

* gold and predicted tuple lists are sorted by (c_s, e_s, c_e, e_e) and
  paired index-wise; the shorter side is padded with absent entries that
  label every token O;
* token F1 accumulates one 3x3 confusion matrix over all tokens of all
  pairs of all examples and reports support-weighted class F1;
* exact match requires all four indices to equal a gold tuple's, each gold
  tuple consumable once; precision/recall/F1 are micro-aggregated over the
  corpus. An example with no gold and no predicted tuples contributes one
  all-O pair to token F1 and nothing to the exact-match counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .corpus import Causality, Example, make_folds
from .errors import DegenerateVariance, UnknownId
from .inference import DecodeConfig, predict_corpus
from .training import TrainConfig, train

CLASSES = ("C", "E", "O")
_CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}


def token_labels(tup: Optional[Causality], n: int) -> list:
    """Per-token labels for one tuple over positions 1..n (sentinel excluded)."""
    labels = ["O"] * n
    if tup is not None:
        for i in range(tup.c_s, tup.c_e + 1):
            labels[i - 1] = "C"
        for i in range(tup.e_s, tup.e_e + 1):
            labels[i - 1] = "E"
    return labels


def _sort_key(tup: Causality):
    return (tup.c_s, tup.e_s, tup.c_e, tup.e_e)


def pair_tuples(gold: Sequence[Causality], pred: Sequence[Causality]) -> list:
    """Index-wise pairing of sorted tuple lists, padded with None."""
    gold = sorted(gold, key=_sort_key)
    pred = sorted(pred, key=_sort_key)
    width = max(len(gold), len(pred))
    return [
        (gold[i] if i < len(gold) else None, pred[i] if i < len(pred) else None)
        for i in range(width)
    ]


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    token_confusion: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    token_classes: dict = field(default_factory=dict)
    token_f1_weighted: float = 0.0
    em_precision: float = 0.0
    em_recall: float = 0.0
    em_f1: float = 0.0
    em_matches: int = 0
    gold_tuples: int = 0
    pred_tuples: int = 0
    n_examples: int = 0

    def to_dict(self) -> dict:
        return {
            "token_f1_weighted": self.token_f1_weighted,
            "token_classes": {
                c: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for c, s in self.token_classes.items()
            },
            "token_confusion": self.token_confusion.astype(int).tolist(),
            "em_precision": self.em_precision,
            "em_recall": self.em_recall,
            "em_f1": self.em_f1,
            "em_matches": self.em_matches,
            "gold_tuples": self.gold_tuples,
            "pred_tuples": self.pred_tuples,
            "n_examples": self.n_examples,
        }


def _prf(tp: float, fp: float, fn: float):
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f1


def _check_ids(examples, predictions):
    known = {ex.segment.id for ex in examples}
    unknown = set(predictions) - known
    if unknown:
        raise UnknownId(f"predictions for unknown ids: {sorted(unknown)[:5]}")


def token_f1(examples: Sequence[Example], predictions: dict) -> EvalReport:
    """Support-weighted token-level F1 over {C, E, O}.

    ``predictions`` maps example id to a tuple list; missing ids count as
    empty predictions.
    """
    _check_ids(examples, predictions)
    confusion = np.zeros((3, 3))
    for example in examples:
        n = example.segment.n_tokens
        pairs = pair_tuples(example.gold, predictions.get(example.segment.id, []))
        if not pairs:
            pairs = [(None, None)]  # empty vs empty still contributes O tokens
        for gold_tup, pred_tup in pairs:
            for g_label, p_label in zip(
                token_labels(gold_tup, n), token_labels(pred_tup, n)
            ):
                confusion[_CLASS_INDEX[g_label], _CLASS_INDEX[p_label]] += 1

    report = EvalReport(token_confusion=confusion, n_examples=len(examples))
    supports = confusion.sum(axis=1)
    weighted = 0.0
    for c, name in enumerate(CLASSES):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        precision, recall, f1 = _prf(tp, fp, fn)
        report.token_classes[name] = ClassScore(precision, recall, f1, int(supports[c]))
        weighted += supports[c] * f1
    total = supports.sum()
    report.token_f1_weighted = weighted / total if total > 0 else 1.0
    return report


def exact_match_f1(
    examples: Sequence[Example], predictions: dict, report: Optional[EvalReport] = None
) -> EvalReport:
    """Micro-aggregated exact-match F1: all four indices must agree."""
    _check_ids(examples, predictions)
    if report is None:
        report = EvalReport(n_examples=len(examples))
    matches = 0
    gold_total = 0
    pred_total = 0
    for example in examples:
        gold = list(example.gold)
        pred = predictions.get(example.segment.id, [])
        gold_total += len(gold)
        pred_total += len(pred)
        available = list(gold)
        for tup in pred:
            if tup in available:
                available.remove(tup)  # each gold tuple consumable once
                matches += 1
    report.em_matches = matches
    report.gold_tuples = gold_total
    report.pred_tuples = pred_total
    if gold_total == 0 and pred_total == 0:
        report.em_precision = report.em_recall = report.em_f1 = 1.0
    else:
        report.em_precision, report.em_recall, report.em_f1 = _prf(
            matches, pred_total - matches, gold_total - matches
        )
    return report


def evaluate(examples: Sequence[Example], predictions: dict) -> EvalReport:
    """Token-level and exact-match metrics in one report."""
    return exact_match_f1(examples, predictions, token_f1(examples, predictions))


# ---------------------------------------------------------------------------
# Cross-validation.

@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    report: EvalReport
    checksum: str = ""


@dataclass
class CrossvalResult:
    ordering: str
    folds: list
    mean: dict
    std: dict

    def fold_scores(self, key: str = "token_f1_weighted") -> list:
        return [getattr(f.report, key) for f in self.folds]


_SUMMARY_KEYS = ("token_f1_weighted", "em_precision", "em_recall", "em_f1")


def run_fold(
    examples: Sequence[Example],
    k: int,
    seed: int,
    fold: int,
    train_config: TrainConfig,
    decode_config: DecodeConfig,
    precomputed_map: Optional[dict] = None,
) -> FoldResult:
    """Train on k-1 folds and score the held-out one. Safe as a worker job:
    the split is re-derived from (examples, k, seed), so results do not
    depend on which process runs the fold."""
    split = make_folds(examples, k, seed)
    train_set, test_set = split.split(examples, fold)
    fold_config = replace(train_config, seed=seed + fold)
    result = train(train_set, fold_config, precomputed_map=precomputed_map)
    predictions, _ = predict_corpus(
        test_set,
        result.params,
        config=decode_config,
        vocab=result.vocab,
        precomputed_map=precomputed_map,
    )
    report = evaluate(test_set, predictions)
    return FoldResult(
        fold=fold,
        n_train=len(train_set),
        n_test=len(test_set),
        report=report,
        checksum=result.params.checksum(),
    )


def crossval(
    examples: Sequence[Example],
    k: int,
    seed: int,
    train_config: TrainConfig,
    decode_config: DecodeConfig = DecodeConfig(),
    precomputed_map: Optional[dict] = None,
    jobs: int = 1,
    log=None,
) -> CrossvalResult:
    """Train on k-1 folds, evaluate on the held-out fold, aggregate.

    Fold assignment and every per-fold training seed derive from ``seed``,
    so repeated runs are identical regardless of ``jobs``. The summary
    reports the mean and sample standard deviation (ddof=1) across folds.
    """
    make_folds(examples, k, seed)  # validate sizes before spawning work
    args = [
        (list(examples), k, seed, fold, train_config, decode_config, precomputed_map)
        for fold in range(k)
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold_job, args))
    else:
        folds = [_run_fold_job(a) for a in args]
    folds.sort(key=lambda fr: fr.fold)
    if log is not None:
        for fr in folds:
            log(
                f"fold {fr.fold} [{train_config.ordering}]: "
                f"token_f1={fr.report.token_f1_weighted:.4f} em_f1={fr.report.em_f1:.4f}"
            )
    mean = {}
    std = {}
    for key in _SUMMARY_KEYS:
        values = np.array([getattr(f.report, key) for f in folds])
        mean[key] = float(values.mean())
        std[key] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return CrossvalResult(train_config.ordering, folds, mean, std)


def _run_fold_job(args) -> FoldResult:
    return run_fold(*args)


# ---------------------------------------------------------------------------
# Paired significance test.

@dataclass
class SignificanceResult:
    t_statistic: float
    p_value: float
    df: int
    mean_difference: float


def paired_significance(scores_a: Sequence[float], scores_b: Sequence[float]) -> SignificanceResult:
    """Two-tailed paired t-test on fold-wise score differences.

    Raises DegenerateVariance when all differences are equal (zero sample
    variance), which makes the statistic undefined.
    """
    if len(scores_a) != len(scores_b):
        raise DegenerateVariance("score lists must have equal length")
    k = len(scores_a)
    if k < 2:
        raise DegenerateVariance("need at least two paired scores")
    diffs = np.asarray(scores_a, dtype=np.float64) - np.asarray(scores_b, dtype=np.float64)
    sd = diffs.std(ddof=1)
    if sd == 0.0:
        raise DegenerateVariance("all paired differences are equal")
    mean_diff = float(diffs.mean())
    t_stat = mean_diff / (sd / math.sqrt(k))
    p_value = 2.0 * float(stats.t.sf(abs(t_stat), df=k - 1))
    return SignificanceResult(float(t_stat), p_value, k - 1, mean_diff)
