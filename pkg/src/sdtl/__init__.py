"""Structure-guided wavelet diffusion transformer for low-light image enhancement.

The package is organised bottom-up: ``tensor`` (numpy autograd), ``wavelet``,
``structure``, ``sem``, ``denoiser``, ``diffusion``, ``pipeline``, plus
``data``/``metrics`` for I/O and evaluation and ``cli`` for the command line.
"""
from sdtl.kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
