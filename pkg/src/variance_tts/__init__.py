"""Non-autoregressive text-to-mel synthesis with explicit duration, pitch and energy modelling."""

__version__ = "0.1.0"
