"""
Models package for HP Codec: audio, token, dataset and configuration records
"""
