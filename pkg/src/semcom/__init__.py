"""Task-unaware semantic communication: split-trained JSCC coders, data adaptation, PAD."""

__version__ = "0.1.0"
