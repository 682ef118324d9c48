"""Face frontalization testbed on a fully synthetic, seeded face domain.

The package combines a small float64 autodiff tape (``tensor``), a PCA
face model with weak-perspective geometry and visibility masks
(``morphable``), a procedural dataset generator (``synthdata``), four
networks (``networks``), the loss terms (``losses``), the staged training
schedule (``training``) and the recognition protocols (``evaluation``).
Convolution kernels run through a compiled extension when it was built,
with a pure numpy fallback selected at import (``facefront.kernels``).
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
