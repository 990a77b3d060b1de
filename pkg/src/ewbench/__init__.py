"""Impact-based verification of extreme-weather forecasts."""

__version__ = "0.1.0"
