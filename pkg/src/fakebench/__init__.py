"""fakebench: facial-region fake detection benchmark toolkit."""

__version__ = "0.1.0"
