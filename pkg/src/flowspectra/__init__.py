"""Mean-curvature-type flows of closed curves and surfaces, and the first
nonzero eigenvalue of the Witten-Laplacian along them."""

__version__ = "0.1.0"
