"""Constant-mean-curvature gluing of geodesic hyperspheres in S^{n+1}."""

__version__ = "0.1.0"
