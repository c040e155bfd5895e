"""Corpus generation, pipeline orchestration and evaluation."""
