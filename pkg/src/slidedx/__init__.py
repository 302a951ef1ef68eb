"""Evidence-seeking diagnostic engine over whole-slide patch embeddings."""

__version__ = "0.1.0"
