"""Query-based temporal action detection with relational attention."""

__version__ = "0.1.0"
