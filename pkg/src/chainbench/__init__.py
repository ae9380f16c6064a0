"""Three-phase throughput harness with a simulated chained-BFT target."""

__version__ = "0.1.0"
