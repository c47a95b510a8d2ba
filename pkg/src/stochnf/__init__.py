"""Normal forms and noise-compensating control for controlled Ito SDEs."""

__version__ = "0.1.0"
