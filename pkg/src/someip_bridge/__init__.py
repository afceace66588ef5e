"""Gateway between a DDS-style topic bus and SOME/IP."""

__version__ = "0.1.0"
