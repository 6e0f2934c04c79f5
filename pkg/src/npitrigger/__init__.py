"""Event-triggered lockdown policies on discrete-time epidemic models."""

__version__ = "0.1.0"
