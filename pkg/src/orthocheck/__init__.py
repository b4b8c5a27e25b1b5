"""Orthogonal convolutions via the Cayley transform, Lipschitz baselines and certification."""

__version__ = "0.1.0"
