"""Cross-video similar-hand mining and weighted contrastive pre-training."""

__version__ = "0.1.0"
