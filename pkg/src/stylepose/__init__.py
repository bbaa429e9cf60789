"""Pose- and appearance-conditioned human image synthesis.

The package splits a person image into two independent conditioning
signals, a dense body-surface pose map and a pose-independent appearance
texture, and feeds both to a weight-demodulated convolutional generator.
Training on pairs of images of the same person in different poses teaches
the generator to re-render any appearance in any pose, which also yields
garment transfer, head swaps, style interpolation, and motion retargeting
at inference time with no retraining.
"""

__version__ = "0.1.0"
