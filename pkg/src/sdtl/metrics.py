"""PSNR and SSIM on float images in [0, 1]."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from sdtl.errors import InputError

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])


def _as_hwc(x):
    if hasattr(x, "to_float"):
        return x.to_float()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b):
    """10 log10(1 / MSE) over all pixels and channels; identical inputs give PSNR_CAP."""
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise InputError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable valid-mode correlation along both axes
    k = len(g)
    rows = sum(g[i] * img[i:img.shape[0] - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j:rows.shape[1] - k + 1 + j] for j in range(k))


def to_luma(x):
    x = _as_hwc(x)
    if x.ndim == 2:
        return x
    return x @ LUMA


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Single-scale SSIM on luma (inputs (H, W, 3) or (H, W)), mean over valid windows."""
    a, b = to_luma(a), to_luma(b)
    if a.shape != b.shape:
        raise InputError(f"ssim: shapes differ {a.shape} vs {b.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise InputError(f"ssim: image {a.shape} smaller than {window}x{window} window")
    c1, c2 = k1 ** 2, k2 ** 2
    g = gaussian_window(window, sigma)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # (name, psnr, ssim)

    def add(self, name, p, s):
        self.rows.append((name, float(p), float(s)))

    @property
    def mean_psnr(self):
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["filename", "psnr_db", "ssim"])
            for name, p, s in self.rows:
                w.writerow([name, f"{p:.6f}", f"{s:.6f}"])
            w.writerow(["MEAN", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])


def evaluate_pair(pred, gt):
    a, b = pred.to_float(), gt.to_float()
    return psnr(a, b), ssim(a, b)
