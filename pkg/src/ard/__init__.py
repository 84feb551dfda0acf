"""Novel-relation discovery toolkit: outlier-based known/novel splitting of
embedded instance pools plus a budgeted adversarial active-labeling loop."""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
