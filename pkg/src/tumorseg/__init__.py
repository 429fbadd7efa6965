"""Data pipeline and evaluation toolkit for multimodal brain-tumour MRI
segmentation: NIfTI I/O, slice preprocessing, augmentation, box prompts,
Dice/HD95 scoring, statistics and overlays."""

__version__ = "0.1.0"
