"""Hard-problem fine-tuning with guided self-generated solutions."""

__version__ = "0.1.0"
