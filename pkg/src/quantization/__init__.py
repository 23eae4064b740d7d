"""
Vector quantization: codebooks, residual chains and the sectioned quantizer.
"""

from src.quantization.codebook import Codebook, kmeans, kmeans_init, nearest_code
from src.quantization.rvq import (QuantizeResult, RvqChain, SectionedRvq, chain_quantize,
                                  latent_from_codes, sectioned_quantize)

__all__ = [
    'Codebook', 'nearest_code', 'kmeans', 'kmeans_init',
    'RvqChain', 'SectionedRvq', 'QuantizeResult', 'chain_quantize', 'sectioned_quantize',
    'latent_from_codes',
]
