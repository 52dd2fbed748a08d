"""Graph exterior calculus and graph neural network layers."""
from .calculus import *  # noqa: F401,F403
from .gnn import *  # noqa: F401,F403
