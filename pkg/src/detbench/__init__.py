"""Detection meta-architectures, cost accounting and speed/accuracy benchmarking on NumPy."""

__version__ = "0.1.0"
