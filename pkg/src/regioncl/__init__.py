"""Urban region embeddings from multi-view graphs with learned contrastive views."""

__version__ = "0.1.0"
