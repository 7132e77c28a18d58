import itertools

import numpy as np
import pytest

from segcap import bpe
from segcap.errors import ConfigError, ContractError
from segcap.model import Model
from segcap.objectives import (ALIGN, ASR2CAP, ASRVID2ASR, ASRVID2ASR_HIDE,
                               CAP2CAP, build_mass_example, caption_batch,
                               make_schedule, mass_batch, negative_partners,
                               pair_batch, run_training_step,
                               sample_alignment_pair, sample_mass_span,
                               sample_ordering_pair, token_accuracy)
from segcap.optim import OptimizerState
from segcap.rng import rng_for

from conftest import tiny_config


class TestSpanSampling:
    def test_half_ratio(self):
        rng = np.random.default_rng(0)
        starts = set()
        for _ in range(200):
            start, span_len = sample_mass_span(10, 0.5, rng)
            assert span_len == 5
            assert 0 <= start <= 5
            starts.add(start)
        assert starts == set(range(6))

    def test_minimum_length_two(self):
        rng = np.random.default_rng(1)
        start, span_len = sample_mass_span(2, 0.5, rng)
        assert span_len == 1 and start in (0, 1)

    def test_reproducible(self):
        a = [sample_mass_span(12, 0.5, np.random.default_rng(7)) for _ in range(1)]
        b = [sample_mass_span(12, 0.5, np.random.default_rng(7)) for _ in range(1)]
        assert a == b

    def test_too_short_rejected(self):
        with pytest.raises(ContractError):
            sample_mass_span(1, 0.5, np.random.default_rng(0))


class TestMassExample:
    def test_basic(self):
        ex = build_mass_example([10, 11, 12, 13], (1, 2))
        assert ex.encoder_ids == [10, bpe.MASK, bpe.MASK, 13]
        assert ex.targets == [11, 12]
        assert ex.dec_ids == [bpe.BOS, 11]
        assert ex.dec_positions == [1, 2]

    def test_full_span(self):
        ex = build_mass_example([10, 11, 12], (0, 3))
        assert ex.encoder_ids == [bpe.MASK] * 3
        assert ex.targets == [10, 11, 12]

    def test_out_of_bounds(self):
        with pytest.raises(ContractError):
            build_mass_example([10, 11], (1, 3))


class TestPairSampling:
    def test_negative_partners_exclusion_zone(self):
        assert negative_partners(2, 6) == [0, 4, 5]

    def test_positive_pair(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            i, j, label = sample_alignment_pair(6, rng, positive=True)
            assert i == j and label == 1

    def test_negatives_at_distance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            i, j, label = sample_alignment_pair(6, rng, positive=False)
            assert abs(i - j) >= 2 and label == 0

    def test_too_few_segments_skipped(self):
        rng = np.random.default_rng(4)
        assert sample_alignment_pair(2, rng, positive=False) is None
        assert sample_ordering_pair(2, rng) is None

    def test_ordering_labels(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            i, j, label = sample_ordering_pair(6, rng)
            assert abs(i - j) >= 2
            assert label == (1 if i < j else 0)

    def test_ordering_antisymmetric_and_balanced(self):
        n = 5
        pairs = [(i, j) for i, j in itertools.product(range(n), range(n))
                 if abs(i - j) >= 2]
        labels = {(i, j): 1 if i < j else 0 for i, j in pairs}
        for i, j in pairs:
            assert labels[(i, j)] == 1 - labels[(j, i)]
        assert sum(labels.values()) * 2 == len(pairs)


class TestSchedules:
    # strategy -> expected step-label multiset, keyed by modality
    TABLE = {
        ("MASS", True): ["cap2cap", "asr2asr"],
        ("MASSvid", True): ["cap2cap", "asr+vid2asr"],
        ("MASSdrop", True): ["cap2cap", "asr+vid2asr"],
        ("MASSalign", True): ["cap2cap", "asr2asr", "align", "order"],
        ("UniD", True): ["asr+vid2cap"],
        ("UniD", False): ["asr2cap"],
        ("BiD", True): ["asr+vid2cap", "cap2asr"],
        ("BiD", False): ["asr2cap", "cap2asr"],
        ("BiDalt", True): ["asr+vid2cap", "cap+vid2asr"],
        ("MASS", False): ["cap2cap", "asr2asr"],
    }

    @pytest.mark.parametrize("strategy,multimodal", sorted(TABLE))
    def test_matches_table(self, strategy, multimodal):
        sched = make_schedule(strategy, multimodal)
        assert sorted(s.label for s in sched.steps) == sorted(self.TABLE[(strategy, multimodal)])

    def test_step_order_preserved(self):
        sched = make_schedule("MASSalign", True)
        assert [s.label for s in sched.steps] == ["cap2cap", "asr2asr", "align", "order"]

    def test_massdrop_flags_hiding(self):
        sched = make_schedule("MASSdrop", True)
        assert sched.steps[1].hide is True
        assert make_schedule("MASSvid", True).steps[1].hide is False

    def test_defaults(self):
        assert make_schedule("MASS", True).epochs == 200
        assert make_schedule("BiD", True).epochs == 30
        assert make_schedule("MASS", True).iterations_per_epoch == 3125

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            make_schedule("MASSxyz", True)

    def test_video_strategy_needs_multimodal(self):
        for strategy in ("MASSvid", "MASSdrop", "MASSalign", "BiDalt"):
            with pytest.raises(ConfigError):
                make_schedule(strategy, multimodal=False)


def small_model(multimodal=True, seed=0):
    return Model.init(tiny_config(multimodal=multimodal), seed=seed, dtype=np.float64)


def random_seqs(rng, n, lo=6, hi=32, min_len=4, max_len=9):
    return [list(rng.integers(lo, hi, size=rng.integers(min_len, max_len)))
            for _ in range(n)]


class TestTrainingStep:
    def test_mass_step_runs_and_returns_loss(self):
        model = small_model()
        opt = OptimizerState.for_params(model.params, lr_max=1e-3, warmup=10)
        rng = np.random.default_rng(0)
        batch = mass_batch(random_seqs(rng, 3), bpe.STYLE_CAP, rng)
        loss = run_training_step(CAP2CAP, batch, model, opt)
        assert np.isfinite(loss) and loss > 0
        assert opt.t == 1

    def test_align_step_leaves_decoder_untouched_by_gradients(self):
        model = small_model()
        opt = OptimizerState.for_params(model.params, lr_max=1e-3, warmup=10)
        rng = np.random.default_rng(1)
        pairs = [(list(rng.integers(6, 32, size=5)),
                  rng.normal(size=(3, 6)).astype(np.float32), k % 2)
                 for k in range(4)]
        batch = pair_batch(pairs, feature_dim=6)
        run_training_step(ALIGN, batch, model, opt)
        for name, p in model.params.items():
            if name.startswith("dec."):
                assert p.grad is None or not np.any(p.grad)
        assert np.any(model.params["head.align.w2"].grad)

    def test_video_step_without_frames_rejected(self):
        model = small_model()
        opt = OptimizerState.for_params(model.params)
        rng = np.random.default_rng(2)
        batch = mass_batch(random_seqs(rng, 2), bpe.STYLE_ASR, rng)
        with pytest.raises(ContractError):
            run_training_step(ASRVID2ASR, batch, model, opt)

    def test_hide_all_zeroes_decoder_text_path(self):
        """With every example hidden, the decoder's attention over text
        states receives exactly zero gradient."""
        model = small_model()
        opt = OptimizerState.for_params(model.params, lr_max=0.0, warmup=10)
        rng = np.random.default_rng(3)
        seqs = random_seqs(rng, 3)
        frames = [rng.normal(size=(2, 6)).astype(np.float32) for _ in seqs]
        batch = mass_batch(seqs, bpe.STYLE_ASR, rng, frames=frames, feature_dim=6,
                           hide_fraction=1.0)
        assert batch.hide_text.all()
        run_training_step(ASRVID2ASR_HIDE, batch, model, opt)
        for name, p in model.params.items():
            if ".xtext." in name:
                assert p.grad is None or not np.any(p.grad), name

    def test_mass_grad_zero_outside_span_padding(self):
        model = small_model()
        opt = OptimizerState.for_params(model.params, lr_max=0.0, warmup=10)
        rng = np.random.default_rng(4)
        # different lengths so the decoder batch is padded
        seqs = [list(rng.integers(6, 32, size=8)), list(rng.integers(6, 32, size=4))]
        batch = mass_batch(seqs, bpe.STYLE_CAP, rng)
        assert not batch.loss_mask.all()
        run_training_step(CAP2CAP, batch, model, opt)

    def test_deterministic_given_seed(self):
        def run():
            model = small_model(seed=11)
            opt = OptimizerState.for_params(model.params, lr_max=1e-3, warmup=10)
            losses = []
            for it in range(3):
                rng = rng_for(123, "mask", "cap2cap", 0, it)
                batch = mass_batch(random_seqs(rng, 4), bpe.STYLE_CAP, rng)
                drop = rng_for(123, "dropout", "cap2cap", 0, it)
                losses.append(run_training_step(CAP2CAP, batch, model, opt, rng=drop))
            return losses, {k: p.data.copy() for k, p in model.params.items()}

        l1, p1 = run()
        l2, p2 = run()
        assert l1 == l2
        assert all(np.array_equal(p1[k], p2[k]) for k in p1)

    def test_caption_batch_supervision(self):
        model = small_model()
        opt = OptimizerState.for_params(model.params, lr_max=1e-3, warmup=10)
        rng = np.random.default_rng(5)
        sources = random_seqs(rng, 3)
        targets = random_seqs(rng, 3, max_len=6)
        batch = caption_batch(sources, targets, bpe.STYLE_ASR, bpe.STYLE_CAP)
        assert batch.dec_ids[0, 0] == bpe.BOS
        row_len = len(targets[0])
        assert batch.targets[0, row_len] == bpe.EOS
        loss = run_training_step(ASR2CAP, batch, model, opt)
        assert np.isfinite(loss)
        acc = token_accuracy(model, batch, use_video=False)
        assert 0.0 <= acc <= 1.0
