"""zlik: language-conditioned kinodynamics for structurally damaged vehicles."""

__version__ = "0.1.0"
