"""Physics-informed neural and graph network toolkit."""

__version__ = "0.1.0"
