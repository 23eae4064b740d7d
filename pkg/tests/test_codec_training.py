import copy
from collections import Counter

import numpy as np
import pytest

from src.codec import training
from src.codec.hpcodec import HpCodec
from src.codec.training import (
    CodecTrainer, check_phase_preconditions, codec_train_phase, phase_parameters, sample_iteration_kind,
)
from src.generators.dataset import ClipCorpus
from src.models.base import PreconditionError, ValidationError
from src.models.codec_config import tiny_codec_config
from src.models.tokens import IterationKind


@pytest.fixture
def corpus(tiny_dataset):
    return ClipCorpus(tiny_dataset, 'train')


@pytest.fixture
def no_kmeans(tiny_config):
    config = copy.deepcopy(tiny_config)
    config['codec']['kmeans_iters'] = 0
    return config


def fresh_codec():
    return HpCodec(tiny_codec_config(), np.random.default_rng(0))


class TestIterationKinds:
    def test_uniform_over_three_kinds(self):
        rng = np.random.default_rng(3)
        counts = Counter(sample_iteration_kind(rng) for _ in range(3000))
        assert set(counts) == {IterationKind.HARMONIC, IterationKind.PERCUSSIVE, IterationKind.FULL}
        assert all(abs(c / 3000 - 1 / 3) < 0.05 for c in counts.values())

    def test_always_full_without_semantic_training(self):
        rng = np.random.default_rng(3)
        assert {sample_iteration_kind(rng, semantic=False) for _ in range(50)} == {IterationKind.FULL}


class TestPhases:
    def test_parameter_split(self, tiny_codec):
        params, frozen = phase_parameters(tiny_codec, 'hf')
        assert frozen == ['lf.']
        assert len(params) == len([n for n, _ in tiny_codec.named_parameters() if n.startswith('hf.')])
        assert phase_parameters(tiny_codec, 'finetune')[1] == []
        with pytest.raises(ValidationError):
            phase_parameters(tiny_codec, 'warmup')

    def test_hf_needs_trained_lf(self, tiny_codec, corpus, tiny_config):
        with pytest.raises(PreconditionError, match="train LF phase first"):
            CodecTrainer(tiny_codec, corpus, 'hf', tiny_config, np.random.default_rng(0))

    def test_finetune_needs_hf(self, tiny_codec):
        tiny_codec.trained_phases = {'lf'}
        with pytest.raises(PreconditionError, match="hf"):
            check_phase_preconditions(tiny_codec, 'finetune')


class TestCascade:
    def test_lf_phase_leaves_hf_untouched(self, corpus, tiny_config):
        codec = fresh_codec()
        hf_before, lf_before = codec.checksum('hf.'), codec.checksum('lf.')
        log = codec_train_phase(codec, corpus, 'lf', 3, np.random.default_rng(1), tiny_config)
        assert codec.checksum('hf.') == hf_before
        assert codec.checksum('lf.') != lf_before
        assert codec.trained_phases == {'lf'}
        frame = log.to_frame()
        assert list(frame['step']) == [0, 1, 2]
        assert np.all(np.isfinite(frame['total']))

    def test_hf_phase_leaves_lf_untouched(self, corpus, tiny_config):
        codec = fresh_codec()
        CodecTrainer(codec, corpus, 'lf', tiny_config, np.random.default_rng(1)).run(2)
        lf_before = codec.checksum('lf.')
        CodecTrainer(codec, corpus, 'hf', tiny_config, np.random.default_rng(2)).run(2)
        assert codec.checksum('lf.') == lf_before
        assert codec.trained_phases == {'lf', 'hf'}

    def test_finetune_updates_both_branches(self, corpus, tiny_config):
        codec = fresh_codec()
        CodecTrainer(codec, corpus, 'lf', tiny_config, np.random.default_rng(1)).run(1)
        CodecTrainer(codec, corpus, 'hf', tiny_config, np.random.default_rng(2)).run(1)
        lf_before, hf_before = codec.checksum('lf.'), codec.checksum('hf.')
        CodecTrainer(codec, corpus, 'finetune', tiny_config, np.random.default_rng(3)).run(1)
        assert codec.checksum('lf.') != lf_before
        assert codec.checksum('hf.') != hf_before

    def test_harmonic_iterations_train_only_the_harmonic_chain(self, corpus, no_kmeans, monkeypatch):
        monkeypatch.setattr(training, 'sample_iteration_kind', lambda rng, semantic=True: IterationKind.HARMONIC)
        codec = fresh_codec()
        before = {s: codec.checksum(f"lf.srvq.chains.{s}.") for s in 'HPR'}
        log = CodecTrainer(codec, corpus, 'lf', no_kmeans, np.random.default_rng(4)).run(2)
        assert set(log.to_frame()['kind']) == {'harmonic'}
        assert codec.checksum('lf.srvq.chains.H.') != before['H']
        assert codec.checksum('lf.srvq.chains.P.') == before['P']
        assert codec.checksum('lf.srvq.chains.R.') == before['R']

    def test_pinned_entries_stay_zero(self, corpus, tiny_config):
        codec = fresh_codec()
        CodecTrainer(codec, corpus, 'lf', tiny_config, np.random.default_rng(5)).run(2)
        for chain in codec.lf.srvq.chains.values():
            assert not np.any(chain.codebooks[1].weight.data[0])

    def test_resume_matches_uninterrupted_run(self, corpus, tiny_config, tmp_path):
        straight = fresh_codec()
        CodecTrainer(straight, corpus, 'lf', tiny_config, np.random.default_rng(6)).run(4)

        first = fresh_codec()
        CodecTrainer(first, corpus, 'lf', tiny_config, np.random.default_rng(6), tmp_path).run(2)
        resumed = fresh_codec()
        trainer = CodecTrainer(resumed, corpus, 'lf', tiny_config, np.random.default_rng(99), tmp_path)
        trainer.run(4, resume=True)
        assert trainer.log.to_frame()['step'].tolist() == [0, 1, 2, 3]
        assert resumed.checksum() == straight.checksum()
