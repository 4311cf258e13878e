"""Age-of-information analysis with age-dependent stochastic hybrid systems."""

__version__ = "0.1.0"
