import numpy as np
import pytest

from src.autodiff.gradcheck import MODEL_TOLERANCE
from src.evaluation.gradients import codec_branch_gradcheck, estimator_gradcheck
from src.models.tokens import Stage


@pytest.mark.parametrize("branch", ['lf', 'hf'])
def test_codec_branch_gradients(branch):
    result = codec_branch_gradcheck(np.random.default_rng(11), branch, samples=12)
    assert result.name == f"codec-{branch}"
    assert result.tolerance == MODEL_TOLERANCE
    assert result.passed, result.worst


@pytest.mark.parametrize("stage", [Stage.ONE, Stage.TWO])
def test_estimator_gradients(stage):
    result = estimator_gradcheck(np.random.default_rng(12), stage, samples=12)
    assert result.checked == 12
    assert result.passed, result.worst
