"""Monte Carlo tools for backward SDEs with values in a convex domain of a Riemannian manifold."""

__version__ = "0.1.0"
