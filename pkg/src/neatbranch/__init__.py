"""Branch-coverage-driven neuroevolution test generation for block-based game programs."""

__version__ = "0.1.0"
