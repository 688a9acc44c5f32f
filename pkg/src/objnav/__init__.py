"""Object-level topological navigation sandbox."""

__version__ = "0.1.0"
