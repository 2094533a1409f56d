"""Transductive zero-shot learning with a mean-teacher visual embedding and an
attentional graph attribute embedding, on pre-extracted features."""

__version__ = "0.1.0"
