"""Edge-derived structure prior at the two wavelet resolutions."""
from dataclasses import dataclass

import numpy as np

from sdtl import tensor as T
from sdtl.errors import ShapeError
from sdtl.layers import Conv2d, Module
from sdtl.tensor import Tensor

LUMA = np.array([0.299, 0.587, 0.114])
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass
class StructureMaps:
    s1: Tensor  # (B, C_s, H/2, W/2)
    s2: Tensor  # (B, C_s, H/4, W/4)


def sobel_edge(x):
    """Sobel gradient magnitude of the luma plane, replicate padding.

    ``x`` is (3, H, W) or (B, 3, H, W) with values in [0, 1]; the result keeps
    the batch layout with a single channel. No gradient is tracked.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.shape[-3] != 3:
        raise ShapeError(f"sobel_edge expects 3 channels, got shape {data.shape}")
    luma = np.tensordot(LUMA.astype(data.dtype), data, axes=([0], [data.ndim - 3]))
    widths = [(0, 0)] * (luma.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(luma, widths, mode="edge")
    H, W = luma.shape[-2:]
    gx = np.zeros_like(luma)
    gy = np.zeros_like(luma)
    for i in range(3):
        for j in range(3):
            win = p[..., i:i + H, j:j + W]
            gx += SOBEL_X[i, j] * win
            gy += SOBEL_Y[i, j] * win
    mag = np.sqrt(gx * gx + gy * gy)
    return Tensor(np.expand_dims(mag, -3), dtype=data.dtype)


class StructurePrior(Module):
    """conv -> GELU -> stride-2 conv, twice; emits the half- and quarter-resolution maps."""

    def __init__(self, rng, channels):
        super().__init__()
        self.channels = channels
        self.conv1a = Conv2d(rng, 1, channels)
        self.conv1b = Conv2d(rng, channels, channels, stride=2)
        self.conv2a = Conv2d(rng, channels, channels)
        self.conv2b = Conv2d(rng, channels, channels, stride=2)

    def forward(self, edge):
        H, W = edge.shape[-2:]
        if H % 4 or W % 4:
            raise ShapeError(f"structure prior needs sizes divisible by 4, got {H}x{W}")
        s1 = self.conv1b(T.gelu(self.conv1a(edge)))
        s2 = self.conv2b(T.gelu(self.conv2a(s1)))
        return StructureMaps(s1, s2)


def structure_features(edge, prior):
    return prior(edge)
