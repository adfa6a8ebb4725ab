"""Drug-overdose risk prediction from longitudinal claims records."""

__version__ = "0.1.0"
