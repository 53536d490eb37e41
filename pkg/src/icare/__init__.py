"""Road-user importance estimation with intention-based scene context."""

__version__ = "0.1.0"
