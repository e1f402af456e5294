"""API dependency graphs, graph node embeddings, and graph-aware
sequence-to-sequence code generation."""

__version__ = "0.1.0"
