"""
socketlsh - Soft locality-sensitive-hashing scoring for sparse attention.
"""

__version__ = '0.1.0'
