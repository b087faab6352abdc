"""Volterra-function kernels for a planar point potential, the local time at
the origin of the conditioned diffusion, and Monte Carlo checks of both."""

__version__ = "0.1.0"
