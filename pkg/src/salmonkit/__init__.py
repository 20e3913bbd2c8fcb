"""Multi-level salient object ground truth and evaluation toolkit."""

__version__ = "0.1.0"

MODALITIES = ("et", "pc", "rd")
