"""Speaker diarisation with affinity-matrix-aware embedding training."""

__version__ = "0.1.0"
