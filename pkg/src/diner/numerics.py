"""Numerical kernels: affine maps, radix-2 FFT, Adam and seeded randomness.

Everything works on float64 / complex128 numpy arrays. Random streams come
from numpy's Philox4x64 generator, a counter-based bit generator whose output
depends only on the key (the seed) and the counter, so streams are identical
on every platform.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import EmptyInputError, NumericError, ShapeError, SizeError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def make_rng(seed=0):
    """Return a Philox-backed generator keyed by ``seed``.

    An existing ``np.random.Generator`` is passed through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


def seeded_permutation(rng, n):
    """Return a random permutation of ``0..n-1`` drawn from ``rng``."""
    if n < 1:
        raise EmptyInputError("permutation of an empty range requested")
    return make_rng(rng).permutation(int(n))


def is_permutation(perm, n=None):
    perm = np.asarray(perm)
    if perm.ndim != 1 or (n is not None and len(perm) != n):
        return False
    if len(perm) == 0:
        return n == 0
    if not np.issubdtype(perm.dtype, np.integer):
        return False
    return bool(np.array_equal(np.sort(perm), np.arange(len(perm))))


def invert_permutation(perm):
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


def dense_affine(W, b, x):
    """Compute ``W @ x + b``.

    ``x`` may be a single vector or a batch of row vectors ``(B, cols)``.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2:
        raise ShapeError(f"weight matrix must be 2-D, got shape {W.shape}")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"bias of length {b.shape} does not match {W.shape[0]} rows")
    if x.shape[-1:] != (W.shape[1],):
        raise ShapeError(f"input of width {x.shape[-1:]} does not match {W.shape[1]} columns")
    return x @ W.T + b


# --------------------------------------------------------------------- FFT

def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx = idx >> 1
    return rev


@lru_cache(maxsize=None)
def _twiddles(m, sign):
    # exp(sign * i*pi*k/m) evaluated directly per stage to keep errors at ulp level
    w = np.exp(sign * 1j * np.pi * np.arange(m) / m)
    w.setflags(write=False)
    return w


def _fft_last_axis(a, inverse):
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    sign = 1.0 if inverse else -1.0
    lead = a.shape[:-1]
    out = a[..., _bit_reversal(n)]
    m = 1
    while m < n:
        blocks = out.reshape(lead + (n // (2 * m), 2, m))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * _twiddles(m, sign)
        out = np.concatenate((even + odd, even - odd), axis=-1)
        m *= 2
    return out.reshape(lead + (n,))


def fft2(g, inverse=False):
    """Two-dimensional radix-2 DFT over the last two axes.

    The forward transform uses the ``exp(-2*pi*i*k*n/N)`` kernel and is
    unnormalized; the inverse divides by ``H*W``. Leading axes are treated as a
    batch.
    """
    g = np.asarray(g, dtype=np.complex128)
    if g.ndim < 2:
        raise ShapeError(f"fft2 needs at least 2 axes, got shape {g.shape}")
    h, w = g.shape[-2:]
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise SizeError(f"fft2 extents must be powers of two, got {h}x{w}")
    out = _fft_last_axis(g, inverse)
    out = np.swapaxes(_fft_last_axis(np.swapaxes(out, -1, -2), inverse), -1, -2)
    if inverse:
        out = out / (h * w)
    return np.ascontiguousarray(out)


def ifft2(g):
    return fft2(g, inverse=True)


def fftfreq(n, d=1.0):
    """Sample frequencies in FFT bin order (cycles per unit of ``d``)."""
    k = np.arange(n)
    k = np.where(k < (n + 1) // 2, k, k - n)
    return k / (n * d)


# -------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params, dtype=np.float64),
                   np.zeros_like(params, dtype=np.float64), 0)


def check_finite(name, arr):
    arr = np.asarray(arr)
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), arr.shape)
        idx = idx[0] if len(idx) == 1 else idx
        raise NumericError(f"non-finite {name} at index {idx}")


def adam_step(params, grads, state, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """Apply one bias-corrected Adam update to ``params`` in place.

    Returns ``params`` for convenience.
    """
    if params.shape != grads.shape or state.m.shape != params.shape or state.v.shape != params.shape:
        raise ShapeError(
            f"adam_step shapes differ: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}/{state.v.shape}")
    check_finite("gradient", grads)
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grads
    state.v *= beta2
    state.v += (1.0 - beta2) * (grads * grads)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params
