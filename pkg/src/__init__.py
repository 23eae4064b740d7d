"""
HP Codec Package

This package contains a disentangled harmonic/percussive neural audio codec, the
token estimators that extend 16 kHz audio to 48 kHz, and the tooling to train,
evaluate and ablate both on a synthetic corpus.
"""

__version__ = "1.0.0"
__author__ = "HP Codec Team"
