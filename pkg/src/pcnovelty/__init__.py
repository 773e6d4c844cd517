"""Point-cloud novelty detection on latent vectors of a frozen general feature extractor."""

__version__ = "0.1.0"
