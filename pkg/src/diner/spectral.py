"""Spectral statistics of images and learned coordinate maps."""
import json
from dataclasses import dataclass

import numpy as np

from .coord_table import lattice
from .exceptions import DegenerateRangeError, ShapeError
from .network import forward
from .numerics import fft2, fftfreq

MAX_RADIUS = 0.5 * np.sqrt(2.0)


@dataclass
class SpectrumReport:
    band_ratios: list
    band_edges: list
    total_energy: float

    def to_dict(self):
        return dict(band_edges=[list(e) for e in self.band_edges],
                    band_ratios=list(self.band_ratios), total_energy=self.total_energy)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def band_edges(n_bands=4):
    edges = np.linspace(0.0, MAX_RADIUS, n_bands + 1)
    return [(float(edges[k]), float(edges[k + 1])) for k in range(n_bands)]


def band_energies(img, n_bands=4):
    """Sum of FFT magnitudes per equal-width annulus of normalized radial frequency.

    Radius runs over ``[0, sqrt(2)/2]`` cycles/sample; the DC bin falls in band
    0 and the corner (Nyquist, Nyquist) bin in the last band. Channels are
    averaged before the transform.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=-1)
    if img.ndim != 2:
        raise ShapeError(f"band analysis needs a 2-D image, got shape {img.shape}")
    mag = np.abs(fft2(img))
    h, w = img.shape
    r = np.hypot(*np.meshgrid(fftfreq(h), fftfreq(w), indexing="ij"))
    band = np.minimum((r / MAX_RADIUS * n_bands).astype(np.int64), n_bands - 1)
    return np.bincount(band.ravel(), weights=mag.ravel(), minlength=n_bands)


def band_ratios(img, n_bands=4):
    energies = band_energies(img, n_bands)
    total = float(energies.sum())
    ratios = energies / total if total > 0 else np.zeros(n_bands)
    return SpectrumReport([float(x) for x in ratios], band_edges(n_bands), total)


def mapped_bounds(table):
    lo = table.entries.min(axis=0)
    hi = table.entries.max(axis=0)
    flat = np.nonzero(hi <= lo)[0]
    if len(flat):
        raise DegenerateRangeError(f"mapped coordinates are constant along axis {int(flat[0])}")
    return lo, hi


def extract_learned_inr(backbone, table, resolution):
    """Evaluate ``backbone`` on an even mesh spanning the table's bounding box.

    Returns the clamped output reshaped to ``resolution`` (plus a channel axis
    when the backbone has more than one output).
    """
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != table.d_in:
        raise ShapeError(f"resolution {resolution} does not match a {table.d_in}-D table")
    lo, hi = mapped_bounds(table)
    out = np.clip(forward(backbone, lattice(resolution, lo, hi)), 0.0, 1.0)
    out = out.reshape(resolution + (-1,))
    return out[..., 0] if out.shape[-1] == 1 else out


def _upsample_axis(arr, axis, factor):
    n = arr.shape[axis]
    if n == 1:
        return arr
    pos = np.arange((n - 1) * factor + 1) / factor
    i0 = np.minimum(pos.astype(np.int64), n - 2)
    frac = pos - i0
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = -1
    frac = frac.reshape(shape)
    return a + (b - a) * frac


def post_interpolate(out, factor, n_spatial=2):
    """Multilinear upsampling of a discrete output grid.

    Grid nodes are kept and ``factor - 1`` linearly interpolated samples are
    inserted between neighbours along each of the first ``n_spatial`` axes,
    so an axis of length ``n`` becomes ``(n - 1) * factor + 1``.
    """
    out = np.asarray(out, dtype=np.float64)
    factor = int(factor)
    if factor < 1:
        raise ValueError("interpolation factor must be >= 1")
    if factor == 1:
        return out.copy()
    for axis in range(n_spatial):
        out = _upsample_axis(out, axis, factor)
    return out
