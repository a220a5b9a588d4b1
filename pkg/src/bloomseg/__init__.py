"""bloomseg: self-training pseudo-label pipeline for binary flower
panoptic segmentation of large images."""

__version__ = "0.1.0"
