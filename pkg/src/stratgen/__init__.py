"""Strategic generation-investment planning under short- and long-term uncertainty."""

__version__ = "0.1.0"
