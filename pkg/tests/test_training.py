"""Loss semantics, teacher forcing, batching exactness, optimization
determinism, and the finite-difference gradient oracle."""

import math

import numpy as np
import pytest

from causalspan.corpus import Causality, Example, STOP_TUPLE, build_segment
from causalspan.decoder import (
    DecoderState,
    SpanDistributions,
    TupleMemory,
    causality_vector,
    generation_step,
    span_vector,
)
from causalspan.encoder import EncoderConfig, build_vocab, encode
from causalspan.errors import NonFiniteLoss, TargetOutOfRange, TooFewExamples
from causalspan.params import ModelParams
from causalspan.training import (
    TrainConfig,
    analytic_gradient,
    batch_loss,
    example_loss,
    grad_check,
    numeric_gradient_at,
    order_gold,
    relative_errors,
    step_loss,
    train,
)

RNG = np.random.default_rng(7)


def uniform_dists(n_positions):
    p = np.full(n_positions, 1.0 / n_positions)
    return SpanDistributions.from_probs(p, p)


class TestOrderGold:
    def test_empty_gold_is_stop_only(self):
        assert order_gold([], "CF") == [STOP_TUPLE]

    def test_single_tuple_then_stop(self):
        tup = Causality(2, 3, 5, 6)
        assert order_gold([tup], "CF") == [tup, STOP_TUPLE]

    def test_cf_sorts_by_cause_start(self):
        late = Causality(9, 9, 1, 1)
        early = Causality(3, 4, 6, 6)
        assert order_gold([late, early], "CF") == [early, late, STOP_TUPLE]

    def test_ef_sorts_by_effect_start(self):
        a = Causality(9, 9, 1, 1)
        b = Causality(3, 4, 6, 6)
        assert order_gold([a, b], "EF") == [a, b, STOP_TUPLE]


class TestStepLoss:
    def test_perfect_distributions_give_zero_loss(self):
        start = np.zeros(6)
        end = np.zeros(6)
        start[2] = 1.0
        end[3] = 1.0
        sure = SpanDistributions.from_probs(start, end)
        loss = step_loss((sure, sure), Causality(2, 3, 2, 3), "CF")
        assert loss.item() == 0.0

    def test_uniform_non_stop_loss_is_4_ln_positions(self):
        dists = uniform_dists(5)
        loss = step_loss((dists, dists), Causality(1, 2, 3, 4), "CF")
        assert abs(loss.item() - 4.0 * math.log(5)) < 1e-10

    def test_uniform_stop_loss_is_ln_positions(self):
        dists = uniform_dists(5)
        loss = step_loss((dists, dists), STOP_TUPLE, "CF")
        assert abs(loss.item() - math.log(5)) < 1e-10

    def test_stop_loss_uses_only_first_start_head(self):
        start = np.array([0.25, 0.25, 0.25, 0.25])
        first = SpanDistributions.from_probs(start, RNG.dirichlet(np.ones(4)))
        second = SpanDistributions.from_probs(
            RNG.dirichlet(np.ones(4)), RNG.dirichlet(np.ones(4))
        )
        loss = step_loss((first, second), STOP_TUPLE, "CF")
        assert abs(loss.item() - math.log(4)) < 1e-12

    def test_stop_loss_bitwise_invariant_to_ignored_heads(self):
        start = RNG.dirichlet(np.ones(5))
        reference = None
        for _ in range(3):
            first = SpanDistributions.from_probs(start, RNG.dirichlet(np.ones(5)))
            second = SpanDistributions.from_probs(
                RNG.dirichlet(np.ones(5)), RNG.dirichlet(np.ones(5))
            )
            value = step_loss((first, second), STOP_TUPLE, "EF").item()
            if reference is None:
                reference = value
            assert value == reference  # bit-for-bit

    def test_ef_maps_targets_through_effect_first(self):
        start = np.array([0.0, 0.7, 0.1, 0.1, 0.1])
        end = np.array([0.0, 0.1, 0.6, 0.2, 0.1])
        first = SpanDistributions.from_probs(start, end)
        second = SpanDistributions.from_probs(end, start)
        target = Causality(3, 4, 1, 2)  # cause 3..4, effect 1..2
        loss = step_loss((first, second), target, "EF")
        expected = -(
            math.log(start[1]) + math.log(end[2])  # effect span on first head
            + math.log(end[3]) + math.log(start[4])  # cause span on second head
        )
        assert abs(loss.item() - expected) < 1e-12

    def test_out_of_range_target(self):
        dists = uniform_dists(4)
        with pytest.raises(TargetOutOfRange):
            step_loss((dists, dists), Causality(1, 5, 2, 2), "CF")

    def test_loss_never_negative_on_random_distributions(self):
        rng = np.random.default_rng(44)
        for _ in range(200):
            n = int(rng.integers(1, 10))
            first = SpanDistributions.from_probs(
                rng.dirichlet(np.ones(n + 1)), rng.dirichlet(np.ones(n + 1))
            )
            second = SpanDistributions.from_probs(
                rng.dirichlet(np.ones(n + 1)), rng.dirichlet(np.ones(n + 1))
            )
            if rng.random() < 0.25:
                target = STOP_TUPLE
            else:
                c = int(rng.integers(1, n + 1))
                e = int(rng.integers(1, n + 1))
                target = Causality(c, c, e, e)
            assert step_loss((first, second), target, "CF").item() >= 0.0


def tiny_setup(gold, text="alpha beta gamma delta", ordering="CF", seed=23,
               context_dim=2, pos_dim=2, recurrent=True):
    example = Example(build_segment("t1", text), gold)
    vocab = build_vocab([example])
    config = EncoderConfig(context_dim, pos_dim, len(vocab), recurrent)
    params = ModelParams(config, ordering, seed=seed)
    train_config = TrainConfig(ordering=ordering, encoder=config)
    return example, vocab, params, train_config


class TestExampleLoss:
    def test_empty_gold_is_stop_step_loss_only(self):
        example, vocab, params, config = tiny_setup([])
        states = encode(example.segment, params, vocab=vocab)
        step = generation_step(params, states, DecoderState.initial(4), TupleMemory(4), (1, 1))
        expected = step_loss(step, STOP_TUPLE, "CF").item()
        assert abs(example_loss(example, params, vocab, config).item() - expected) < 1e-12

    def test_hand_chained_two_step_loss(self):
        gold = [Causality(1, 2, 4, 4)]
        example, vocab, params, config = tiny_setup(gold)
        states = encode(example.segment, params, vocab=vocab)

        memory = TupleMemory(4)
        state = DecoderState.initial(4)
        step1 = generation_step(params, states, state, memory, (1, 2))
        loss1 = step_loss(step1, gold[0], "CF").item()
        cvec = span_vector(params, states, (1, 2))
        evec = span_vector(params, states, (4, 4))
        memory.add(causality_vector(params, cvec, evec))
        step2 = generation_step(params, states, step1.state, memory, (1, 1))
        loss2 = step_loss(step2, STOP_TUPLE, "CF").item()

        expected = (loss1 + loss2) / 2.0
        assert abs(example_loss(example, params, vocab, config).item() - expected) < 1e-12

    def test_duplicate_example_has_same_loss(self):
        gold = [Causality(1, 1, 3, 4)]
        example, vocab, params, config = tiny_setup(gold)
        single = example_loss(example, params, vocab, config).item()
        batched = batch_loss([example, example], params, vocab, config).item()
        assert abs(single - batched) < 1e-12


class TestBatchedEqualsPerExample:
    def test_ragged_batch_matches_mean_of_singles(self):
        texts_and_gold = [
            ("alpha beta gamma delta epsilon", [Causality(1, 2, 4, 5)]),
            ("one two", []),
            ("u v w x y z", [Causality(5, 6, 1, 2), Causality(3, 3, 1, 2)]),
            ("lone", []),
        ]
        examples = [Example(build_segment(str(i), t), g)
                    for i, (t, g) in enumerate(texts_and_gold)]
        vocab = build_vocab(examples)
        for ordering in ("CF", "EF"):
            for recurrent in (True, False):
                config = EncoderConfig(4, 2, len(vocab), recurrent)
                params = ModelParams(config, ordering, seed=31)
                tc = TrainConfig(ordering=ordering, encoder=config)
                singles = [example_loss(ex, params, vocab, tc).item() for ex in examples]
                batched = batch_loss(examples, params, vocab, tc).item()
                assert abs(batched - np.mean(singles)) < 1e-10

    def test_batched_gradients_match_finite_differences(self):
        examples = [
            Example(build_segment("a", "p q r s"), [Causality(1, 1, 3, 4)]),
            Example(build_segment("b", "p q"), []),
        ]
        vocab = build_vocab(examples)
        config = EncoderConfig(2, 2, len(vocab), recurrent=True)
        params = ModelParams(config, "CF", seed=3)
        # A moderate-magnitude point keeps every probed gradient well above
        # the finite-difference noise floor.
        params.set_flat(np.random.default_rng(8).uniform(-0.9, 0.9, params.n_params()))
        tc = TrainConfig(ordering="CF", encoder=config)

        params.zero_grads()
        loss = batch_loss(examples, params, vocab, tc)
        loss.backward()
        analytic = params.grads_flat()

        rng = np.random.default_rng(0)
        coords = rng.choice(params.n_params(), size=40, replace=False)
        flat = params.flat()
        numeric = np.zeros(len(coords))
        for j, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + 1e-5
            params.set_flat(flat)
            hi = batch_loss(examples, params, vocab, tc).item()
            flat[idx] = orig - 1e-5
            params.set_flat(flat)
            lo = batch_loss(examples, params, vocab, tc).item()
            flat[idx] = orig
            numeric[j] = (hi - lo) / 2e-5
        params.set_flat(flat)
        errs = relative_errors(analytic[coords], numeric)
        assert errs.max() < 1e-4


class TestTrain:
    def _corpus(self):
        from causalspan.synth import make_corpus

        return make_corpus(8, seed=2)

    def test_zero_learning_rate_leaves_params_bitwise_unchanged(self):
        examples = self._corpus()
        config = TrainConfig(ordering="CF", learning_rate=0.0, epochs=3, batch_size=4,
                             seed=5, encoder=EncoderConfig(4, 4, recurrent=True))
        result = train(examples, config)
        reference = ModelParams(result.params.config, "CF", seed=5)
        assert result.params.checksum() == reference.checksum()

    def test_seeded_repeat_is_bit_identical(self):
        examples = self._corpus()
        config = TrainConfig(ordering="EF", learning_rate=1e-3, epochs=4, batch_size=4,
                             seed=9, encoder=EncoderConfig(4, 4, recurrent=True))
        a = train(examples, config)
        b = train(examples, config)
        assert a.params.checksum() == b.params.checksum()
        assert a.history == b.history

    def test_loss_decreases_on_learnable_data(self):
        examples = self._corpus()
        config = TrainConfig(ordering="CF", learning_rate=2e-3, epochs=12, batch_size=8,
                             seed=1, encoder=EncoderConfig(8, 4, recurrent=True))
        result = train(examples, config)
        assert result.history[-1]["loss"] < result.history[0]["loss"]

    def test_empty_dataset_rejected(self):
        with pytest.raises(TooFewExamples):
            train([], TrainConfig())

    def test_non_finite_loss_aborts_with_diagnostics(self):
        examples = self._corpus()
        config = TrainConfig(ordering="CF", learning_rate=1e-3, epochs=1, batch_size=4,
                             seed=5, encoder=EncoderConfig(4, 4, recurrent=True))
        vocab = build_vocab(examples)
        enc = EncoderConfig(4, 4, len(vocab), True)
        params = ModelParams(enc, "CF", seed=5)
        params.tensors["att_w1"].value[0, 0] = np.nan
        with np.errstate(invalid="ignore"):
            with pytest.raises(NonFiniteLoss):
                train(examples, config, vocab=vocab, params=params)


class TestGradCheck:
    def test_small_model_passes(self):
        gold = [Causality(1, 2, 4, 4)]
        example, vocab, params, config = tiny_setup(
            gold, text="alpha beta gamma delta", context_dim=4, pos_dim=4, seed=11
        )
        rng = np.random.default_rng(31)
        params.set_flat(rng.uniform(-0.9, 0.9, params.n_params()))
        report = grad_check(params, example, vocab, config, probe_count=90, seed=13)
        assert report.probes >= 90
        assert set(report.per_group) == {
            "tok_emb", "enc_rnn", "pos_emb", "attention", "decoder_cell",
            "cause_pointer", "effect_pointer", "span_proj", "tuple_proj",
        }
        assert report.max_rel_err < 1e-4

    def test_corrupted_gradient_is_detected(self):
        # Negating one analytic coordinate drives |ga - gn| to 2|g| against
        # a denominator of 2|g|: the error saturates at 1.0, far above the
        # 1e-4 pass threshold, so the corruption cannot slip through.
        gold = [Causality(1, 1, 3, 3)]
        example, vocab, params, config = tiny_setup(gold, text="a b c", seed=11)
        rng = np.random.default_rng(3)
        params.set_flat(rng.uniform(-0.9, 0.9, params.n_params()))
        analytic = analytic_gradient(example, params, vocab, config)
        idx = int(np.argmax(np.abs(analytic)))
        corrupted = analytic.copy()
        corrupted[idx] = -corrupted[idx]
        numeric = numeric_gradient_at([idx], example, params, vocab, config)
        err = relative_errors(corrupted[[idx]], numeric)[0]
        assert abs(err - 1.0) < 1e-3
        assert err > 100 * 1e-4

    def test_zero_gradient_coordinates_excluded_by_floor(self):
        # PAD and unused-token embedding rows never touch the loss.
        gold = [Causality(1, 1, 3, 3)]
        example, vocab, params, config = tiny_setup(gold, text="a b c", seed=11)
        analytic = analytic_gradient(example, params, vocab, config)
        pad_row = params.tensors["tok_emb"].value.shape[1] * 2
        coords = [pad_row, pad_row + 1]
        numeric = numeric_gradient_at(coords, example, params, vocab, config)
        errs = relative_errors(analytic[coords], numeric)
        np.testing.assert_array_equal(errs, 0.0)


class TestParamsAndCheckpoints:
    def test_flat_round_trip_lossless(self):
        config = EncoderConfig(4, 4, 9, recurrent=True)
        params = ModelParams(config, "CF", seed=3)
        flat = params.flat()
        params.set_flat(flat)
        np.testing.assert_array_equal(params.flat(), flat)

    @pytest.mark.parametrize("fmt", ["text", "binary"])
    def test_checkpoint_round_trip(self, tmp_path, fmt):
        config = EncoderConfig(4, 4, 9, recurrent=True)
        params = ModelParams(config, "EF", seed=12)
        path = tmp_path / f"model.{fmt}.ckpt"
        params.save(path, vocab_hash="abc123", fmt=fmt)
        loaded, header = ModelParams.load(path)
        assert header["vocab_hash"] == "abc123"
        assert header["ordering"] == "EF"
        assert loaded.ordering == "EF"
        np.testing.assert_array_equal(loaded.flat(), params.flat())

    def test_pointer_widths_depend_on_ordering(self):
        config = EncoderConfig(4, 4, 9, recurrent=False)
        cf = ModelParams(config, "CF", seed=1)
        ef = ModelParams(config, "EF", seed=1)
        d_h = config.d_h
        assert cf.cause_pointer.input_width == 2 * d_h
        assert cf.effect_pointer.input_width == 3 * d_h
        assert ef.cause_pointer.input_width == 3 * d_h
        assert ef.effect_pointer.input_width == 2 * d_h
