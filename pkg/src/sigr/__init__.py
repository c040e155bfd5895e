"""Signature detection and signature-based document retrieval."""
__version__ = "0.1.0"
