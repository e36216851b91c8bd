"""Clinical-note embedding refinement for mortality prediction."""

__version__ = "0.1.0"
