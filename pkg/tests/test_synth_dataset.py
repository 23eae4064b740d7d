import numpy as np
import pytest

from src.generators.dataset import ClipCorpus, build_dataset, split_plan, synth_specs, verify_manifest
from src.generators.synth import click_times, synth_clip
from src.models.base import PreconditionError, ValidationError
from src.models.dataset import DatasetManifest, SynthSpec
from tests.conftest import TINY_OVERRIDES, TINY_RATE


class TestSynth:
    @pytest.mark.parametrize("kind", ['monophonic', 'polyphonic', 'percussive'])
    def test_same_seed_same_clip(self, kind):
        spec = SynthSpec(kind=kind, duration=0.25, sample_rate=16000, f0_max=440.0, n_partials=8)
        a = synth_clip(spec, np.random.default_rng(9))
        b = synth_clip(spec, np.random.default_rng(9))
        np.testing.assert_array_equal(a.samples, b.samples)
        assert len(a) == 4000
        assert np.max(np.abs(a.samples)) <= spec.peak + 1e-6

    def test_aliasing_rejected(self):
        with pytest.raises(ValidationError, match="aliasing"):
            SynthSpec(kind='monophonic', sample_rate=16000, f0_max=880.0, n_partials=20)

    def test_percussive_ignores_partial_limit(self):
        assert SynthSpec(kind='percussive', sample_rate=16000, f0_max=880.0, n_partials=20).n_samples == 40000

    def test_periodic_clicks(self):
        spec = SynthSpec(kind='percussive', duration=1.0, sample_rate=8000, click_rate=4.0)
        onsets = click_times(spec, np.random.default_rng(0))
        assert onsets.size == 4
        assert np.all(np.abs(np.diff(onsets) - 2000) <= 1)

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            SynthSpec(kind='noise')


class TestSplitPlan:
    def test_last_indices_held_out(self):
        plan = split_plan({'monophonic': 10, 'percussive': 5}, test_fraction=0.2)
        mono = [p for p in plan if p['kind'] == 'monophonic']
        assert [p['split'] for p in mono] == ['train'] * 8 + ['test'] * 2
        assert mono[0]['clip_id'] == 'mono_00000'
        assert [p['kind'] for p in plan][-1] == 'percussive'

    def test_unknown_kind(self):
        with pytest.raises(ValidationError, match="unknown synth kinds"):
            split_plan({'drone': 2})


class TestDataset:
    def test_tiny_dataset_layout(self, tiny_dataset):
        assert tiny_dataset.sample_rate == TINY_RATE
        assert len(tiny_dataset.split('train')) == 5
        assert len(tiny_dataset.split('test')) == 3
        assert all(set(r.hpr) == {'harmonic', 'percussive', 'residual'} for r in tiny_dataset.clips)
        assert verify_manifest(tiny_dataset) == []

    def test_manifest_reload(self, tiny_dataset):
        back = DatasetManifest.load(tiny_dataset.root / 'manifest.json')
        assert [c.clip_id for c in back.clips] == [c.clip_id for c in tiny_dataset.clips]

    def test_build_is_reproducible(self, tmp_path):
        data = dict(TINY_OVERRIDES['data'], counts={'monophonic': 2})
        specs = synth_specs(data)
        a = build_dataset(specs, data['counts'], tmp_path / 'a', seed=5, hpr=None)
        b = build_dataset(specs, data['counts'], tmp_path / 'b', seed=5, hpr=None, workers=2)
        assert [c.sha256 for c in a.clips] == [c.sha256 for c in b.clips]
        c = build_dataset(specs, data['counts'], tmp_path / 'c', seed=6, hpr=None)
        assert [x.sha256 for x in c.clips] != [x.sha256 for x in a.clips]

    def test_verify_detects_mutation(self, tmp_path):
        data = dict(TINY_OVERRIDES['data'], counts={'percussive': 2})
        manifest = build_dataset(synth_specs(data), data['counts'], tmp_path, seed=1, hpr=None)
        target = manifest.clips[1]
        path = manifest.resolve(target.path)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0x40
        path.write_bytes(bytes(blob))
        assert verify_manifest(manifest) == [target.path]

    def test_corpus_crops(self, tiny_dataset, rng):
        corpus = ClipCorpus(tiny_dataset, 'train')
        crops = corpus.crop_batch(rng, 3, 200)
        assert crops.shape == (3, 200)
        padded = corpus.crop_batch(rng, 1, 10 * TINY_RATE)
        assert np.all(padded[0, 600:] == 0.0)

    def test_components_required(self, tmp_path, rng):
        data = dict(TINY_OVERRIDES['data'], counts={'monophonic': 1})
        manifest = build_dataset(synth_specs(data), data['counts'], tmp_path, seed=1, test_fraction=0.0, hpr=None)
        corpus = ClipCorpus(manifest, 'train')
        assert not corpus.has_components()
        with pytest.raises(PreconditionError, match="components"):
            corpus.crop_batch(rng, 1, 100, component='harmonic')

    def test_empty_split(self, tmp_path):
        data = dict(TINY_OVERRIDES['data'], counts={'monophonic': 1})
        manifest = build_dataset(synth_specs(data), data['counts'], tmp_path, seed=1, test_fraction=0.0, hpr=None)
        with pytest.raises(PreconditionError, match="empty"):
            ClipCorpus(manifest, 'test')
