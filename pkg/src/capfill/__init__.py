"""capfill: interactive image-caption completion at desk scale.

Given a precomputed image feature vector and a partially typed caption with
a cursor position, the engine returns ranked completed sentences in real
time.  The package also ships the character-level training pipeline, caption
quality metrics, session analytics and an HTTP annotation service.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
