"""Subdiffusion parameter estimation under high-frequency localization noise."""
__version__ = "0.1.0"
