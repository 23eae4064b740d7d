import numpy as np
import pytest

from src.autodiff.tensor import Tensor, precision
from src.models.base import ShapeError, ValidationError
from src.models.tokens import SEMANTIC_SECTIONS, Section
from src.quantization.codebook import Codebook, kmeans, kmeans_init, nearest_code
from src.quantization.rvq import RvqChain, SectionedRvq, chain_quantize, latent_from_codes, sectioned_quantize


@pytest.fixture
def latents(rng):
    return rng.normal(size=(1000, 4))


class TestCodebook:
    def test_pinned_row_survives_assignment(self, rng):
        cb = Codebook(8, 4, rng, pin_zero=True)
        cb.assign(rng.normal(size=(8, 4)))
        assert not np.any(cb.weight.data[0])

    def test_assign_checks_shape(self, rng):
        with pytest.raises(ShapeError):
            Codebook(8, 4, rng).assign(np.zeros((4, 4)))

    def test_nearest_code_prefers_lowest_index_on_ties(self):
        entries = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(nearest_code(entries, np.array([[0.9, 0.1], [0.0, 2.0]])), [0, 2])

    def test_kmeans_distortion_never_increases(self, latents, rng):
        centroids, history = kmeans(latents, 16, 10, rng)
        assert centroids.shape == (16, 4)
        assert len(history) == 11
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_kmeans_init_builds_pinned_codebook(self, latents, rng):
        cb = kmeans_init(latents, 8, 3, rng, pin_zero=True)
        assert cb.size == 8 and cb.dim == 4
        assert not np.any(cb.weight.data[0])


class TestChain:
    def test_residual_norms_shrink_after_fit(self, latents, rng):
        chain = RvqChain(Section.HARMONIC, 2, 16, 4, rng)
        energies = chain.fit(latents, 5, rng)
        assert energies[0] > energies[1] >= energies[2]
        norms = chain_quantize(chain, Tensor(latents)).residual_norms[Section.HARMONIC]
        assert len(norms) == 3
        assert norms[0] > norms[1] >= norms[2] - 1e-6

    def test_later_stages_keep_a_zero_entry(self, rng):
        chain = RvqChain(Section.PERCUSSIVE, 3, 8, 4, rng)
        assert all(not np.any(cb.weight.data[0]) for cb in chain.codebooks[1:])
        assert np.any(chain.codebooks[0].weight.data[0])

    def test_gradient_passes_straight_through(self, latents, rng):
        chain = RvqChain(Section.HARMONIC, 2, 8, 4, rng)
        with precision('float64'):
            x = Tensor(latents[:20], requires_grad=True)
            chain_quantize(chain, x).quantized.sum().backward()
        np.testing.assert_allclose(x.grad, np.ones((20, 4)))

    def test_dimension_mismatch(self, rng):
        chain = RvqChain(Section.HARMONIC, 2, 8, 4, rng)
        with pytest.raises(ShapeError):
            chain_quantize(chain, Tensor(np.zeros((3, 5))))


class TestSectioned:
    def test_losses_and_codewords_add_across_sections(self, latents, rng):
        srvq = SectionedRvq(SEMANTIC_SECTIONS, 2, 8, 4, rng)
        x = Tensor(latents[:50])
        result = sectioned_quantize(srvq, x, SEMANTIC_SECTIONS)
        parts = [chain_quantize(srvq.chain(s), x) for s in SEMANTIC_SECTIONS]
        assert float(result.codebook_loss.data) == pytest.approx(sum(float(p.codebook_loss.data) for p in parts),
                                                                 rel=1e-5)
        assert float(result.commitment_loss.data) == pytest.approx(
            sum(float(p.commitment_loss.data) for p in parts), rel=1e-5)
        summed = sum(q.data for q in result.per_section.values())
        np.testing.assert_allclose(result.quantized.data, summed, atol=1e-5)
        np.testing.assert_allclose(latent_from_codes(srvq, result.codes).data, summed, atol=1e-5)

    def test_inactive_sections_are_not_quantized(self, latents, rng):
        srvq = SectionedRvq(SEMANTIC_SECTIONS, 2, 8, 4, rng)
        result = sectioned_quantize(srvq, Tensor(latents[:10]), (Section.PERCUSSIVE,))
        assert set(result.codes) == {Section.PERCUSSIVE}
        np.testing.assert_allclose(result.quantized.data, result.per_section[Section.PERCUSSIVE].data, atol=1e-6)

    def test_empty_selection_decodes_to_zero(self, latents, rng):
        srvq = SectionedRvq(SEMANTIC_SECTIONS, 2, 8, 4, rng)
        codes = sectioned_quantize(srvq, Tensor(latents[:10]), SEMANTIC_SECTIONS).codes
        zero = latent_from_codes(srvq, codes, sections=())
        assert zero.shape == (10, 4)
        assert not np.any(zero.data)

    def test_empty_active_set_rejected(self, rng):
        srvq = SectionedRvq(SEMANTIC_SECTIONS, 2, 8, 4, rng)
        with pytest.raises(ValidationError, match="empty"):
            sectioned_quantize(srvq, Tensor(np.zeros((2, 4))), ())

    def test_unknown_section(self, rng):
        srvq = SectionedRvq((Section.FULL,), 2, 8, 4, rng)
        with pytest.raises(ValidationError):
            srvq.chain(Section.HARMONIC)
