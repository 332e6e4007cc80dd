"""kgedet: knowledge-graph-embedded classification heads for object detection.

Fixed semantic class prototypes, embedding-space metrics and losses with
analytic gradients, nearest-neighbor decoding, and an error-distribution
analysis suite, validated at desk scale on synthetic data.
"""

from ._kernels import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
