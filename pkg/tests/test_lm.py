import math

import numpy as np
import pytest

from src.autodiff import functional as F
from src.lm.estimator import Estimator, EstimatorBank, bank_checkpoint, build_inputs, load_estimators
from src.lm.inference import (DecodeSettings, chunk_plan, extend, predict_hf, section_selective_extend)
from src.autodiff.optim import Adam
from src.lm.training import LmTrainer, TokenCorpus, batch_loss, encode_corpus, lm_train_step, next_token_accuracy
from src.generators.dataset import ClipCorpus
from src.models.audio import AudioClip
from src.models.base import InvariantError, ShapeError, ValidationError
from src.models.codec_config import tiny_estimator_config
from src.models.tokens import SEMANTIC_SECTIONS, Section, Stage, TokenSequence
from src.utils.persistence import save_checkpoint

VOCAB = 8


@pytest.fixture
def estimator():
    return Estimator(tiny_estimator_config(VOCAB), np.random.default_rng(0))


@pytest.fixture
def bank(tiny_codec):
    cfg = tiny_estimator_config(VOCAB, max_frames=16)
    return EstimatorBank(cfg, tiny_codec.sections, np.random.default_rng(0))


def streams(rng, n, batch=None):
    shape = (n,) if batch is None else (batch, n)
    return [rng.integers(0, VOCAB, size=shape) for _ in range(3)]


def lf_sequence(rng, frames, rate=400, hop=4):
    codes = rng.integers(0, VOCAB, size=(3, 2, frames))
    return TokenSequence('lf', SEMANTIC_SECTIONS, codes, (True, True, True), rate / hop, rate, frames * hop, VOCAB)


class TestEstimator:
    def test_stage_one_is_causal(self, estimator, rng):
        lf1, lf2, hf1 = streams(rng, 12)
        base = estimator(lf1, lf2, hf1, Stage.ONE).data
        lf1b, hf1b = lf1.copy(), hf1.copy()
        lf1b[7] = (lf1b[7] + 1) % VOCAB
        hf1b[7] = (hf1b[7] + 1) % VOCAB
        changed = estimator(lf1b, lf2, hf1b, Stage.ONE).data
        np.testing.assert_allclose(changed[0, :7], base[0, :7], atol=1e-6)
        assert not np.allclose(changed[0, 7:], base[0, 7:])

    def test_stage_one_does_not_see_the_current_hf_token(self, estimator, rng):
        lf1, lf2, hf1 = streams(rng, 10)
        base = estimator(lf1, lf2, hf1, Stage.ONE).data
        hf1b = hf1.copy()
        hf1b[4] = (hf1b[4] + 1) % VOCAB
        np.testing.assert_allclose(estimator(lf1, lf2, hf1b, Stage.ONE).data[0, :5], base[0, :5], atol=1e-6)

    def test_initial_loss_near_uniform(self, estimator, rng):
        lf1, lf2, hf1 = streams(rng, 16, batch=4)
        ce = F.cross_entropy(estimator(lf1, lf2, hf1, Stage.ONE), hf1)
        assert abs(float(ce.data) - math.log(VOCAB)) < 0.5

    def test_input_validation(self, estimator, rng):
        lf1, lf2, hf1 = streams(rng, 10)
        with pytest.raises(ShapeError):
            build_inputs(estimator, lf1, lf2[:9], hf1, Stage.ONE)
        long = streams(rng, 17)
        with pytest.raises(ShapeError, match="frame count"):
            build_inputs(estimator, *long, Stage.ONE)

    def test_shared_estimator_needs_section_index(self, rng):
        cfg = tiny_estimator_config(VOCAB, shared=True)
        bank = EstimatorBank(cfg, SEMANTIC_SECTIONS, rng)
        est, index = bank.for_section(Section.PERCUSSIVE)
        assert index == 1
        lf1, lf2, hf1 = streams(rng, 6)
        assert est(lf1, lf2, hf1, Stage.TWO, (), index).shape == (1, 6, VOCAB)
        with pytest.raises(ValidationError, match="section index"):
            est(lf1, lf2, hf1, Stage.TWO)

    def test_all_lf_streams_variant(self, rng):
        cfg = tiny_estimator_config(VOCAB, all_lf_streams=True)
        bank = EstimatorBank(cfg, SEMANTIC_SECTIONS, rng)
        lf = lf_sequence(rng, 6)
        lf1, lf2, extra = bank.lf_streams(lf, Section.HARMONIC)
        assert len(extra) == 4
        est, _ = bank.for_section(Section.HARMONIC)
        assert est(lf1, lf2, lf1, Stage.ONE, extra).shape == (1, 6, VOCAB)


class TestChunking:
    def test_short_sequence_is_one_window(self):
        assert chunk_plan(10, 32) == [(0, 0, 10)]

    def test_overlapping_windows(self):
        assert chunk_plan(50, 32) == [(0, 0, 24), (16, 24, 33), (18, 33, 50)]

    @pytest.mark.parametrize("n", [33, 64, 100, 257])
    def test_plan_covers_every_frame_once(self, n):
        plan = chunk_plan(n, 32)
        assert plan[0][1] == 0 and plan[-1][2] == n
        for (start, keep_from, keep_to), nxt in zip(plan, plan[1:] + [None]):
            assert start <= keep_from < keep_to <= start + 32
            if nxt is not None:
                assert nxt[1] == keep_to


class TestPrediction:
    def test_greedy_decoding_is_deterministic(self, bank, tiny_codec, rng):
        lf = lf_sequence(rng, 40)
        a = predict_hf(bank, lf, tiny_codec.cfg.hf)
        b = predict_hf(bank, lf, tiny_codec.cfg.hf)
        assert a.codes.shape == (3, 2, 40)
        np.testing.assert_array_equal(a.codes, b.codes)
        assert a.sample_rate == 1200 and a.length == 480

    def test_sampling_is_seeded(self, bank, tiny_codec, rng):
        lf = lf_sequence(rng, 8)
        settings = DecodeSettings('sample', temperature=1.5, top_k=4, seed=3)
        a = predict_hf(bank, lf, tiny_codec.cfg.hf, settings)
        b = predict_hf(bank, lf, tiny_codec.cfg.hf, settings)
        np.testing.assert_array_equal(a.codes, b.codes)

    def test_bad_decode_settings(self):
        with pytest.raises(ValidationError):
            DecodeSettings('beam')
        with pytest.raises(ValidationError):
            DecodeSettings('sample', temperature=0.0)


class TestExtension:
    def test_empty_section_set_is_plain_upsampling(self, tiny_codec, bank, rng):
        clip = AudioClip(0.3 * rng.standard_normal(100), 400)
        out = section_selective_extend(tiny_codec, bank, clip, ())
        np.testing.assert_array_equal(out.samples, AudioClip(tiny_codec.to_hf(clip.as_float64(), 300), 1200).samples)

    def test_extend_output_rate_and_length(self, tiny_codec, bank, rng):
        clip = AudioClip(0.3 * rng.standard_normal(101), 400)
        out = extend(tiny_codec, bank, clip)
        assert out.sample_rate == 1200
        assert len(out) == 303

    def test_extend_rejects_wrong_rate(self, tiny_codec, bank):
        with pytest.raises(ValidationError, match="400 Hz"):
            extend(tiny_codec, bank, AudioClip(np.zeros(300), 1200))


class TestTraining:
    def test_corpus_rejects_misaligned_pairs(self, rng):
        lf = lf_sequence(rng, 10)
        hf = TokenSequence('hf', SEMANTIC_SECTIONS, np.zeros((3, 2, 9)), (True,) * 3, 100.0, 1200, 108, VOCAB)
        with pytest.raises(InvariantError):
            TokenCorpus([(lf, hf)])

    def test_single_step_updates_every_estimator(self, bank, rng):
        pairs = []
        for _ in range(2):
            hf_codes = rng.integers(0, VOCAB, size=(3, 2, 12))
            hf = TokenSequence('hf', SEMANTIC_SECTIONS, hf_codes, (True,) * 3, 100.0, 1200, 144, VOCAB)
            pairs.append((lf_sequence(rng, 12), hf))
        before = {s: bank.checksum(f"estimators.{s.value}.") for s in bank.sections}
        loss, stage, values = lm_train_step(bank, pairs, rng, Adam(bank.parameters()), 1e-3)
        assert math.isfinite(loss)
        assert stage in (Stage.ONE, Stage.TWO)
        assert set(values) == {'H', 'P', 'R'}
        assert all(bank.checksum(f"estimators.{s.value}.") != before[s] for s in bank.sections)

    def test_training_loop_and_checkpoint(self, tiny_codec, tiny_dataset, tiny_config, tmp_path):
        corpus = encode_corpus(tiny_codec, ClipCorpus(tiny_dataset, 'train'))
        assert len(corpus) == 5
        bank = EstimatorBank(tiny_estimator_config(VOCAB), tiny_codec.sections, np.random.default_rng(1))
        frame = LmTrainer(bank, corpus, tiny_config, np.random.default_rng(2), tmp_path, steps=3).run()
        assert frame['step'].tolist() == [0, 1, 2]
        assert set(frame['stage']) <= {1, 2}
        assert {'ce_H', 'ce_P', 'ce_R'} <= set(frame.columns)
        assert np.all(np.isfinite(frame['loss']))

        pairs = corpus.sample_batch(np.random.default_rng(0), 2, 16)
        assert 0.0 <= next_token_accuracy(bank, pairs) <= 1.0
        total, values = batch_loss(bank, pairs, Stage.TWO)
        assert float(total.data) == pytest.approx(sum(values.values()), rel=1e-5)

        path = save_checkpoint(tmp_path / 'estimators.hpck', bank_checkpoint(bank, 'd'))
        loaded = load_estimators(path, bank.cfg, bank.sections, 'd')
        assert loaded.checksum() == bank.checksum()
