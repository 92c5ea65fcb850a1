"""
@module rxnalign
@description Atom-aligned reaction representations for condition, yield and selectivity prediction
@version 0.1.0
@last_updated 2026-10-18
@status stable
"""

__version__ = "0.1.0"
