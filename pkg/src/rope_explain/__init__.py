"""Black-box explanations that stay faithful under covariate shift."""

__version__ = "0.1.0"
