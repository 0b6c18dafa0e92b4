"""Graph-structured nonlinear optimal control and spatial sensitivity decay."""

__version__ = "0.1.0"
