"""Protected data pipelines at desk scale.

A pipeline carries a record from an authenticated source, through
whitelisted user-side filters and optional pinned-model inference, to a
consumer that verifies the whole hop-by-hop proof chain offline.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
