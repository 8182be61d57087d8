"""Multi-height lensless imaging.

A specimen ``O`` under illumination ``P`` is propagated to several
specimen-to-sensor distances ``z`` with the paraxial Fresnel transfer
function and recorded as intensity ``I_z = |propagate(P * O, z)|^2``.
:class:`LenslessProcess` plugs this forward model into :func:`diner.training.fit`
so that a coordinate network can be fitted to the measurements.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .coord_table import lattice
from .exceptions import ConfigError, NumericError, SamplingError, ShapeError
from .network import BackboneSpec
from .numerics import fft2, fftfreq
from .training import TrainConfig, build_model, fit, psnr_from_mse, SampleSet

logger = logging.getLogger(__name__)

DEFAULT_WAVELENGTH = 532e-9
DEFAULT_PITCH = 2e-6
DEFAULT_HEIGHTS = (0.2e-3, 0.3e-3, 0.4e-3)
# the physics loss is a sum over pixels and heights, so it tolerates a larger
# step than the image-fitting default for sine networks
DEFAULT_LR = 1e-3
DEFAULT_EPOCHS = 2000


@dataclass
class OpticsConfig:
    """Wavelength, pixel pitch and propagation distances, all in meters."""

    wavelength: float = DEFAULT_WAVELENGTH
    pixel_pitch: float = DEFAULT_PITCH
    heights: tuple = DEFAULT_HEIGHTS
    illumination: np.ndarray = None  # complex (H, W); None means a unit plane wave

    def __post_init__(self):
        self.heights = tuple(float(z) for z in self.heights)
        if not self.wavelength > 0 or not self.pixel_pitch > 0:
            raise ConfigError("wavelength and pixel pitch must be positive")
        if not self.heights:
            raise ConfigError("at least one propagation height is required")
        if len(set(self.heights)) != len(self.heights):
            raise ConfigError("propagation heights must be distinct")
        if self.illumination is not None:
            self.illumination = np.asarray(self.illumination, dtype=np.complex128)

    def illumination_for(self, shape):
        if self.illumination is None:
            return np.ones(shape, dtype=np.complex128)
        if self.illumination.shape != tuple(shape):
            raise ShapeError(f"illumination {self.illumination.shape} does not match field {shape}")
        return self.illumination

    def manifest(self):
        return dict(lambda_m=self.wavelength, pitch_m=self.pixel_pitch, heights_m=list(self.heights))

    @classmethod
    def from_manifest(cls, doc):
        return cls(wavelength=float(doc["lambda_m"]), pixel_pitch=float(doc["pitch_m"]),
                   heights=tuple(doc["heights_m"]))


@dataclass
class MeasurementSet:
    """Intensity images, one per configured height, stacked as ``(n_heights, H, W)``."""

    intensities: np.ndarray
    heights: tuple = field(default=())

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.intensities.ndim != 3:
            raise ShapeError("measurements must be stacked as (n_heights, H, W)")
        if self.heights and len(self.heights) != self.intensities.shape[0]:
            raise ShapeError("one intensity image per height is required")
        if np.any(self.intensities < 0) or not np.all(np.isfinite(self.intensities)):
            raise NumericError("intensities must be finite and non-negative")

    @property
    def shape(self):
        return self.intensities.shape[1:]


def check_sampling(shape, z, wavelength, pitch):
    """Reject distances whose transfer-function phase is undersampled.

    The phase gradient of the transfer function at the highest frequency,
    ``lambda * |z| * f_max``, must stay within half the field width, which is
    the same as ``lambda * |z| <= N * pitch**2`` along the shorter axis.
    """
    n = min(shape)
    f_max = 1.0 / (2.0 * pitch)
    if wavelength * abs(z) * f_max > n * pitch / 2.0 * (1 + 1e-12):
        raise SamplingError(
            f"z={z:g} m is undersampled for a {n}-pixel field at pitch {pitch:g} m "
            f"(need |z| <= {n * pitch * pitch / wavelength:g} m)")


def transfer_function(shape, z, wavelength, pitch):
    """Fresnel transfer function ``exp(i*2*pi*z/lambda) * exp(-i*pi*lambda*z*(fx^2+fy^2))``."""
    check_sampling(shape, z, wavelength, pitch)
    fy = fftfreq(shape[0], pitch)
    fx = fftfreq(shape[1], pitch)
    f2 = fy[:, None] ** 2 + fx[None, :] ** 2
    k_phase = np.mod(2.0 * np.pi * z / wavelength, 2.0 * np.pi)
    return np.exp(1j * (k_phase - np.pi * wavelength * z * f2))


def propagate(field, z, optics):
    """Propagate a complex field (or a stack of fields) over distance ``z``."""
    field = np.asarray(field, dtype=np.complex128)
    H = transfer_function(field.shape[-2:], z, optics.wavelength, optics.pixel_pitch)
    return fft2(fft2(field) * H, inverse=True)


def simulate(obj, optics):
    """Record ``|propagate(P * O, z)|^2`` at every configured height."""
    obj = np.asarray(obj, dtype=np.complex128)
    exit_wave = optics.illumination_for(obj.shape) * obj
    spectrum = fft2(exit_wave)
    stack = []
    for z in optics.heights:
        H = transfer_function(obj.shape, z, optics.wavelength, optics.pixel_pitch)
        stack.append(np.abs(fft2(spectrum * H, inverse=True)) ** 2)
    return MeasurementSet(np.stack(stack), optics.heights)


def make_phantom(shape=(64, 64), seed=0):
    """Synthetic amplitude + phase specimen built from smooth discs.

    Amplitude lies in ``[0.3, 1]`` and phase in ``[-1, 1.2]`` radians.
    """
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")

    def disc(cy, cx, r, soft=0.08):
        d = np.hypot(yy - cy, xx - cx)
        return 0.5 * (1.0 - np.tanh((d - r) / soft))

    amplitude = 1.0 - 0.5 * disc(-0.35, -0.3, 0.3) - 0.3 * disc(0.4, 0.35, 0.25) \
        - 0.2 * disc(0.3, -0.45, 0.15)
    phase = 1.2 * disc(0.25, 0.1, 0.35) - 1.0 * disc(-0.4, 0.45, 0.2) + 0.6 * disc(-0.1, -0.5, 0.2)
    amplitude = np.clip(amplitude, 0.3, 1.0)
    return amplitude * np.exp(1j * phase)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def outputs_to_field(pred, shape):
    """Map network outputs ``(N, 2)`` to a complex field.

    Channel 0 goes through a sigmoid to give amplitude in ``(0, 1)``; channel 1
    is scaled by pi to give phase.
    """
    pred = np.asarray(pred, dtype=np.float64)
    amp = _sigmoid(pred[:, 0]).reshape(shape)
    phase = (np.pi * pred[:, 1]).reshape(shape)
    return amp * np.exp(1j * phase)


class LenslessProcess:
    """Physics loss ``sum_z || |propagate(P*O, z)|^2 - I_z ||^2`` for network outputs."""

    full_batch_only = True

    def __init__(self, meas, optics):
        if len(optics.heights) != meas.intensities.shape[0]:
            raise ShapeError("measurement stack and optics disagree on the number of heights")
        self.meas = meas
        self.optics = optics
        self.shape = meas.shape
        self.P = optics.illumination_for(self.shape)
        self.H = np.stack([transfer_function(self.shape, z, optics.wavelength, optics.pixel_pitch)
                           for z in optics.heights])
        self.peak = float(meas.intensities.max())

    def predicted_intensity(self, pred):
        field = outputs_to_field(pred, self.shape)
        waves = fft2(fft2(self.P * field)[None] * self.H, inverse=True)
        return np.abs(waves) ** 2

    def loss_and_grad(self, pred, rows=None):
        if rows is not None:
            raise ConfigError("lensless reconstruction is full-batch only")
        amp = _sigmoid(pred[:, 0]).reshape(self.shape)
        phase = (np.pi * pred[:, 1]).reshape(self.shape)
        rot = np.exp(1j * phase)
        field = amp * rot
        waves = fft2(fft2(self.P * field)[None] * self.H, inverse=True)
        resid = np.abs(waves) ** 2 - self.meas.intensities
        loss = float(np.sum(resid * resid))
        # dL/dE (as dRe + i dIm) = 2 * dL/dI * 2 * E; adjoint propagation uses conj(H)
        g_wave = 4.0 * resid * waves
        g_exit = fft2(np.sum(fft2(g_wave) * np.conj(self.H), axis=0), inverse=True)
        g_field = np.conj(self.P) * g_exit
        g_amp = np.real(np.conj(g_field) * rot)
        g_phase = np.real(np.conj(g_field) * 1j * field)
        grad = np.empty_like(pred)
        grad[:, 0] = (g_amp * amp * (1.0 - amp)).reshape(-1)
        grad[:, 1] = (g_phase * np.pi).reshape(-1)
        return loss, grad

    def measurement_psnr(self, pred):
        mse = float(np.mean((self.predicted_intensity(pred) - self.meas.intensities) ** 2))
        return psnr_from_mse(mse, self.peak)

    psnr = measurement_psnr


def reconstruct(meas, optics, cfg, spec=None, table_init="uniform", table_scale=1e-4):
    """Fit a coordinate network (normally a SIREN with a table) to the measurements.

    Returns ``(field, model, MetricsLog)``; the log's PSNR column is the
    measurement-domain PSNR with the peak measured intensity as the signal
    peak.
    """
    if len(optics.heights) < 2:
        warnings.warn("a single height leaves phase retrieval ill-posed", UserWarning, stacklevel=2)
    if spec is None:
        spec = BackboneSpec(d_in=2, d_out=2, width=64, depth=2, activation="sine")
    if spec.d_out != 2 or spec.d_in != 2:
        raise ConfigError("lensless reconstruction needs a 2-D input, 2-channel backbone")
    data = SampleSet(meas.shape, np.zeros((int(np.prod(meas.shape)), 2)))
    process = LenslessProcess(meas, optics)
    model = build_model(spec, meas.shape, cfg.use_table, table_init, table_scale, cfg.seed)
    model, log = fit(model, data, cfg, process)
    field = outputs_to_field(model.predict(meas.shape), meas.shape)
    return field, model, log


@dataclass
class PermittivityContrast:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape:
            raise ShapeError("real and imaginary contrast grids differ in shape")
        if np.any(self.im < 0):
            raise ConfigError("the imaginary contrast of an absorbing medium must be >= 0")


def permittivity_to_ri(contrast, n0):
    """Convert permittivity contrast to complex refractive index ``(n_re, n_im)``.

    ``n_re = sqrt((eps_re + sqrt(eps_re^2 + eps_im^2)) / 2)`` with
    ``eps_re = n0^2 + d_re`` and ``n_im = d_im / (2 n_re)``.
    """
    if not n0 > 0:
        raise ConfigError("background refractive index must be positive")
    eps_re = n0 * n0 + contrast.re
    n_re = np.sqrt(0.5 * (eps_re + np.sqrt(eps_re * eps_re + contrast.im * contrast.im)))
    with np.errstate(divide="ignore", invalid="ignore"):
        n_im = contrast.im / (2.0 * n_re)
    if not (np.all(np.isfinite(n_re)) and np.all(np.isfinite(n_im))):
        raise NumericError("refractive index conversion produced non-finite values")
    return n_re, n_im
