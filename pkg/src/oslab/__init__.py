"""oslab: spectral laboratory for wall-bounded shear-flow stability estimates."""

__version__ = "0.1.0"
