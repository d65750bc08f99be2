"""Fourth-order curvature on asymptotically Euclidean metrics."""

__version__ = "0.1.0"
