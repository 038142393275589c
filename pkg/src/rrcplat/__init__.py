"""Self-hostable annotation and evaluation platform for robust-reading tasks."""

__version__ = "0.1.0"
