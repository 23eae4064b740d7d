import numpy as np
import pandas as pd
import pytest

from src.models.base import CorruptFileError, DigestMismatchError, ValidationError
from src.models.tokens import SEMANTIC_SECTIONS, Section, TokenSequence
from src.utils.persistence import (
    Checkpoint, load_checkpoint, load_tokens, run_directory, save_checkpoint, save_tokens, sha256_file, write_frame,
)


@pytest.fixture
def checkpoint(rng):
    return Checkpoint(
        digest='ab' * 32,
        tensors={'enc.weight': rng.standard_normal((3, 4)).astype(np.float32), 'enc.bias': np.zeros(4)},
        optimizer={'0.m': rng.standard_normal(12)},
        meta={'phase': 'lf', 'step': 7},
    )


def sequence(branch, rng, frames=9, active=(True, True, False)):
    codes = rng.integers(0, 8, size=(3, 2, frames))
    codes[[i for i, a in enumerate(active) if not a]] = 0
    rate = 400 if branch == 'lf' else 1200
    return TokenSequence(branch, SEMANTIC_SECTIONS, codes, active, 100.0, rate, frames * rate // 100, 8)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, checkpoint):
        path = save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        back = load_checkpoint(path, expected_digest=checkpoint.digest)
        assert back.meta == checkpoint.meta
        assert set(back.tensors) == set(checkpoint.tensors)
        np.testing.assert_array_equal(back.tensors['enc.weight'], checkpoint.tensors['enc.weight'])
        np.testing.assert_array_equal(back.optimizer['0.m'], checkpoint.optimizer['0.m'])
        assert back.optimizer['0.m'].dtype == np.float64

    def test_resave_is_byte_identical(self, tmp_path, checkpoint):
        first = save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        second = save_checkpoint(tmp_path / 'b.hpck', load_checkpoint(first))
        assert sha256_file(first) == sha256_file(second)

    def test_truncated_file(self, tmp_path, checkpoint):
        path = save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CorruptFileError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path, checkpoint):
        path = save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        path.write_bytes(b'NOPE' + path.read_bytes()[4:])
        with pytest.raises(CorruptFileError, match="magic"):
            load_checkpoint(path)

    def test_flipped_payload_byte(self, tmp_path, checkpoint):
        path = save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptFileError, match="checksum"):
            load_checkpoint(path)

    def test_digest_mismatch(self, tmp_path, checkpoint):
        path = save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        with pytest.raises(DigestMismatchError):
            load_checkpoint(path, expected_digest='cd' * 32)
        loaded = load_checkpoint(path, expected_digest='cd' * 32, allow_mismatch=True)
        assert loaded.digest == checkpoint.digest

    def test_no_temporary_left_behind(self, tmp_path, checkpoint):
        save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        assert [p.name for p in tmp_path.iterdir()] == ['a.hpck']


class TestTokens:
    def test_round_trip_two_branches(self, tmp_path, rng):
        lf, hf = sequence('lf', rng), sequence('hf', rng)
        back = load_tokens(save_tokens(tmp_path / 't.hptk', [lf, hf]))
        assert [s.branch for s in back] == ['lf', 'hf']
        for original, loaded in zip((lf, hf), back):
            np.testing.assert_array_equal(loaded.codes, original.codes)
            assert loaded.active == original.active
            assert loaded.sections == original.sections
            assert loaded.length == original.length

    def test_full_section_survives(self, tmp_path, rng):
        seq = TokenSequence('lf', (Section.FULL,), rng.integers(0, 8, (1, 2, 5)), (True,), 100.0, 400, 20, 8)
        assert load_tokens(save_tokens(tmp_path / 't.hptk', [seq]))[0].sections == (Section.FULL,)

    def test_truncated_token_file(self, tmp_path, rng):
        path = save_tokens(tmp_path / 't.hptk', [sequence('lf', rng)])
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(CorruptFileError):
            load_tokens(path)

    def test_nothing_to_write(self, tmp_path):
        with pytest.raises(ValidationError):
            save_tokens(tmp_path / 't.hptk', [])

    def test_checkpoint_magic_rejected(self, tmp_path, checkpoint):
        path = save_checkpoint(tmp_path / 'a.hpck', checkpoint)
        with pytest.raises(CorruptFileError, match="magic"):
            load_tokens(path)


class TestRunFiles:
    def test_run_directory(self, tmp_path):
        config = {'run_root': str(tmp_path / 'runs')}
        assert run_directory(config, 'eval') == tmp_path / 'runs' / 'eval'
        assert run_directory(config, 'eval', str(tmp_path / 'x')).is_dir()

    def test_frame_uses_lf_line_endings(self, tmp_path):
        path = write_frame(tmp_path / 'f.csv', pd.DataFrame({'a': [1.0, 0.1], 'b': ['x', 'y']}))
        raw = path.read_bytes()
        assert b'\r\n' not in raw
        assert raw.splitlines()[0] == b'a,b'
