"""
Evaluation package: objective metrics, band-split reports and section-ablation harnesses.
"""
