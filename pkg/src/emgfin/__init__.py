"""emgfin: feature-imitation networks for sEMG hand-movement recognition."""

__version__ = "0.1.0"
