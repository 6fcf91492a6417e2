"""Translation-invariant pairwise maximum-entropy models of expressive performance."""

__version__ = "0.1.0"
