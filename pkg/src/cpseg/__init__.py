"""Deep attentive 3-D segmentation of thin shells (cortical plate)."""

__version__ = "0.1.0"
