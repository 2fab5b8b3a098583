"""Audio-visual scene classification toolkit.

Pipeline stages: spectrogram extraction (mel / gammatone / constant-Q
with delta stacking), Phase-I backbone training, embedding export at
the FC(1024) or FC(10) tap, Phase-II fusion + head training (methods
f1..f6), and evaluation.  See avfuse.cli for the command-line entry
points.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
