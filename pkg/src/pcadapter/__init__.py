"""Point-cloud domain adaptation with shape/locality adapters and beta-rectified pseudo-labels."""

__version__ = "0.1.0"
