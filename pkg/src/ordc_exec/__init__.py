"""Trade-execution simulator on LOB snapshots and offline-RL-with-dynamic-context tools."""

__version__ = "0.1.0"
