"""Cost simulator for multi-cloud object storage with TTL-based replica eviction."""

__version__ = "0.1.0"
