"""Moving-mesh finite elements for Landau-de Gennes Q-tensor dynamics in 2-D."""

__version__ = "0.1.0"
