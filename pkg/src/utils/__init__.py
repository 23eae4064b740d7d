"""
Utils package for HP Codec
"""
