"""Image quality metrics on linear [0, 1] images."""
from dataclasses import dataclass, field

import numpy as np

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def gaussian_window(size=WINDOW, sigma=SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _filter_valid(img, g):
    win = np.lib.stride_tricks.sliding_window_view(img, len(g), axis=0)
    img = win @ g
    win = np.lib.stride_tricks.sliding_window_view(img, len(g), axis=1)
    return win @ g


def ssim(a, b, data_range=1.0):
    """Single-scale SSIM with an 11x11 Gaussian window (valid region), averaged over channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < WINDOW or a.shape[1] < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW}")
    g = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def add(self, rendered, gt, label=""):
        self.psnr.append(psnr(rendered, gt))
        self.ssim.append(ssim(rendered, gt))
        self.labels.append(label)

    @property
    def count(self):
        return len(self.psnr)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def csv_text(self):
        lines = ["frame,psnr,ssim"]
        lines += [f"{lab},{p:.6f},{s:.6f}" for lab, p, s in zip(self.labels, self.psnr, self.ssim)]
        lines.append(f"mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write(self.csv_text())
