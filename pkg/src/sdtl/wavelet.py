"""Orthonormal 2-D Haar analysis/synthesis on (..., H, W) tensors.

For each 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2     HL = (a - b + c - d) / 2
    LH = (a + b - c - d) / 2     HH = (a - b - c + d) / 2

HL is the horizontal high-pass (it responds to vertical edges). The transform
is orthonormal, so its adjoint is its inverse and the backward pass of each
direction is the other direction.
"""
from dataclasses import dataclass

import numpy as np

from sdtl import kernels
from sdtl import tensor as T
from sdtl.errors import ShapeError
from sdtl.tensor import Tensor

# analysis filters (low-pass, high-pass) for the separable form
LOWPASS = np.array([1.0, 1.0]) / np.sqrt(2.0)
HIGHPASS = np.array([1.0, -1.0]) / np.sqrt(2.0)


@dataclass
class SubbandSet:
    ll: Tensor
    hl: Tensor
    lh: Tensor
    hh: Tensor

    @property
    def highs(self):
        return (self.hl, self.lh, self.hh)

    @property
    def shape(self):
        return self.ll.shape

    def replace(self, **kw):
        fields = {"ll": self.ll, "hl": self.hl, "lh": self.lh, "hh": self.hh}
        fields.update(kw)
        return SubbandSet(**fields)


def _analysis_array(x):
    lead = x.shape[:-2]
    H, W = x.shape[-2:]
    s = kernels.haar_analysis(x.reshape((-1, H, W)))
    return s.reshape((4,) + lead + (H // 2, W // 2))


def _synthesis_array(s):
    lead = s.shape[1:-2]
    h, w = s.shape[-2:]
    x = kernels.haar_synthesis(s.reshape((4, -1, h, w)))
    return x.reshape(lead + (2 * h, 2 * w))


def _haar_stack(x):
    return T._result(_analysis_array(x.data), (x,), lambda g: (_synthesis_array(g),))


def _haar_unstack(s):
    return T._result(_synthesis_array(s.data), (s,), lambda g: (_analysis_array(g),))


def dwt2(x):
    """One analysis level: (..., H, W) -> SubbandSet of (..., H/2, W/2) planes."""
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ShapeError(f"dwt2 needs even spatial size, got {H}x{W}")
    s = _haar_stack(x)
    return SubbandSet(s[0], s[1], s[2], s[3])


def iwt2(s):
    """Inverse of :func:`dwt2`."""
    shapes = {b.shape for b in (s.ll, s.hl, s.lh, s.hh)}
    if len(shapes) != 1:
        raise ShapeError(f"iwt2: subband shapes differ: {sorted(shapes)}")
    return _haar_unstack(T.stack([s.ll, s.hl, s.lh, s.hh]))


def dwt2_level2(x):
    H, W = x.shape[-2:]
    if H % 4 or W % 4:
        raise ShapeError(f"two-level dwt needs sizes divisible by 4, got {H}x{W}")
    level1 = dwt2(x)
    return level1, dwt2(level1.ll)


def iwt2_level2(level1, level2):
    """Rebuild the image from both levels; ``level1.ll`` is ignored."""
    return iwt2(level1.replace(ll=iwt2(level2)))
