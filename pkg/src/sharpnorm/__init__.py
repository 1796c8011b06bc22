"""Scale-invariant sharpness metrics for small ReLU networks."""

__version__ = "0.1.0"
