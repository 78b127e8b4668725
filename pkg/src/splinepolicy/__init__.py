"""B-spline action chunking, flow-matching policies and asynchronous execution."""

__version__ = "0.1.0"
