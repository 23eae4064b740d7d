"""
Generators package for HP Codec: synthetic clips and the dataset builder
"""
