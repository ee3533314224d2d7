"""Desk-scale laboratory for de-homogenized-query dense detection.

The package decomposes the method into small, independently testable
pieces: a reverse-mode autodiff engine (`tensor`), box geometry
(`boxes`), one-to-one assignment (`matching`), suppression baselines
(`suppression`), the training losses and duplicate-query equilibrium
analysis (`losses`), the query de-homogenization block (`dcg`), a toy
trainable detector (`model`), synthetic crowded scenes (`scenes`),
crowd-detection metrics (`metrics`), and a CLI runner (`cli`).
"""

__version__ = "0.1.0"

from .boxes import Box
from .tensor import DiffTensor, Tape

__all__ = ["Box", "DiffTensor", "Tape", "__version__"]
