"""Physics-informed Kolmogorov-Arnold network solvers for high-index DAEs."""

__version__ = "0.1.0"
