"""Few-shot object detection with a learned sparse spatial graph, on a
synthetic co-occurrence benchmark."""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
