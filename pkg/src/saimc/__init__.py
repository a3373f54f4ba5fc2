"""Monte Carlo linear transport in 2D with surface adjoint importance sampling."""

__version__ = "0.1.0"
