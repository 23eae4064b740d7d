import json

import pytest

from src.models.base import ConfigError
from src.utils.config import config_digest, deep_merge, load_configuration, parse_override, write_resolved_config


def load(*overrides, **kwargs):
    return load_configuration(overrides=overrides, use_environment=False, **kwargs)


class TestProfiles:
    def test_desk_defaults(self):
        config = load()
        assert config['profile'] == 'desk'
        assert config['codec']['lf']['sample_rate'] == 16000
        assert config['codec']['hf']['encoder_rates'] == [2, 5, 6, 8]

    def test_paper_profile_widens_models(self):
        desk, paper = load(), load(profile='paper')
        assert paper['codec']['lf']['latent_dim'] == 1024
        assert paper['lm']['layers'] == 6
        assert config_digest(paper) != config_digest(desk)

    @pytest.mark.parametrize('profile', ['desk', 'paper'])
    def test_codec_learning_rates(self, profile):
        lr = load(profile=profile)['train']['lr']
        assert (lr['lf'], lr['hf'], lr['finetune']) == (1e-4, 1e-4, 5e-5)

    def test_faster_learning_rate_is_opt_in(self):
        assert load('train.lr.lf=5e-4')['train']['lr']['lf'] == pytest.approx(5e-4)

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match="unknown profile"):
            load(profile='cluster')


class TestOverrides:
    def test_parse_override_values(self):
        assert parse_override('train.steps.lf=100') == {'train': {'steps': {'lf': 100}}}
        assert parse_override('codec.sections=single') == {'codec': {'sections': 'single'}}
        assert parse_override('lm.shared_estimator=true') == {'lm': {'shared_estimator': True}}

    def test_override_without_equals(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            parse_override('train.steps.lf')

    def test_overrides_and_seed_resolution(self, tmp_path):
        path = tmp_path / 'c.json'
        path.write_text(json.dumps({'seed': 3, 'train': {'steps': {'lm': 9}}}), encoding='utf-8')
        config = load_configuration(str(path), overrides=['train.steps.lm=11'], seed=42, use_environment=False)
        assert config['train']['steps']['lm'] == 11
        assert config['train']['steps']['lf'] == 2000
        assert config['seed'] == 42

    def test_deep_merge_keeps_base(self):
        base = {'a': {'b': 1, 'c': 2}}
        merged = deep_merge(base, {'a': {'b': 5}})
        assert merged == {'a': {'b': 5, 'c': 2}}
        assert base == {'a': {'b': 1, 'c': 2}}

    def test_environment(self, monkeypatch, tmp_path):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv('HPX_SEED', '17')
        monkeypatch.setenv('HPX_LOG_LEVEL', 'debug')
        config = load_configuration()
        assert config['seed'] == 17
        assert config['logging']['log_level'] == 'DEBUG'
        assert load_configuration(seed=1)['seed'] == 1


class TestValidation:
    def test_schema_violation(self):
        with pytest.raises(ConfigError, match="codec.sections"):
            load('codec.sections=stereo')

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{not json', encoding='utf-8')
        with pytest.raises(ConfigError, match="cannot read"):
            load_configuration(str(path), use_environment=False)

    def test_hf_rate_preset(self):
        config = load('codec.hf_rate=32000')
        assert config['codec']['hf']['sample_rate'] == 32000
        assert config['codec']['hf']['encoder_rates'] == [2, 2, 5, 8]
        assert config['data']['sample_rate'] == 32000
        assert config['data']['synth']['n_partials'] == 18

    def test_unsupported_hf_rate(self):
        with pytest.raises(ConfigError, match="hf_rate"):
            load('codec.hf_rate=44100')


class TestDigest:
    def test_digest_ignores_training_sections(self):
        a = load()
        b = load('train.steps.lf=5', 'eval.workers=4')
        assert config_digest(a) == config_digest(b)
        assert config_digest(a) != config_digest(load('codec.codebook_size=512'))

    def test_resolved_config_written(self, tmp_path):
        path = write_resolved_config(load(), tmp_path / 'run')
        assert json.loads(path.read_text(encoding='utf-8'))['profile'] == 'desk'
