"""Multi-view hashing: gated fusion, metric + quantization training, Hamming retrieval."""

__version__ = "0.1.0"
