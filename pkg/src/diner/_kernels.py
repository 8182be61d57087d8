"""Fused sin/cos kernel used by sine activations.

``np.sin`` on float64 goes through scalar libm and is the bottleneck of SIREN
training. This kernel does a Cody-Waite reduction by pi/2 and evaluates the
fdlibm minimax polynomials for sin and cos on [-pi/4, pi/4], which lets LLVM
vectorize the loop. Error stays within a couple of ulp of libm for |x| below
1e5; arrays holding larger arguments fall back to numpy.

Falls back to numpy when numba is unavailable or ``DINER_NO_NUMBA`` is set.
"""
import os

import numpy as np

_INV_PIO2 = 6.36619772367581382433e-01
_PIO2_1 = 1.57079632673412561417e+00
_PIO2_1T = 6.07710050650619224932e-11
_S1 = -1.66666666666666324348e-01
_S2 = 8.33333333332248946124e-03
_S3 = -1.98412698298579493134e-04
_S4 = 2.75573137070700676789e-06
_S5 = -2.50507602534068634195e-08
_S6 = 1.58969099521155010221e-10
_C1 = 4.16666666666666019037e-02
_C2 = -1.38888888888741095749e-03
_C3 = 2.48015872894767294178e-05
_C4 = -2.75573143513906633035e-07
_C5 = 2.08757232129817482790e-09
_C6 = -1.13596475577881948265e-11
_BIG = 1e5
_ROUND = 6755399441055744.0  # 1.5 * 2**52: adding and subtracting rounds to nearest


def _sincos_scalar_loop(x, s_out, c_out):
    # all-float arithmetic (no int conversion, no rint call) so the loop vectorizes
    for i in range(x.size):
        xi = x[i]
        n = (xi * _INV_PIO2 + _ROUND) - _ROUND
        y = (xi - n * _PIO2_1) - n * _PIO2_1T
        z = y * y
        r = _S2 + z * (_S3 + z * (_S4 + z * (_S5 + z * _S6)))
        s = y + (z * y) * (_S1 + z * r)
        rc = z * (_C1 + z * (_C2 + z * (_C3 + z * (_C4 + z * (_C5 + z * _C6)))))
        hz = 0.5 * z
        w = 1.0 - hz
        c = w + (((1.0 - w) - hz) + z * rc)
        q = n - 4.0 * np.floor(n * 0.25)
        half = np.floor(q * 0.5)
        odd = q - 2.0 * half
        even = 1.0 - odd
        sign_s = 1.0 - 2.0 * half
        t = np.floor((q + 1.0) * 0.5)
        sign_c = 1.0 - 2.0 * (t - 2.0 * np.floor(t * 0.5))
        s_out[i] = sign_s * (even * s + odd * c)
        c_out[i] = sign_c * (even * c + odd * s)


_jit = None
if not os.environ.get("DINER_NO_NUMBA"):
    try:
        import numba

        _jit = numba.njit(cache=True, fastmath={"contract", "nsz"})(_sincos_scalar_loop)
    except ImportError:  # pragma: no cover - numba is an optional accelerator
        _jit = None

HAVE_NUMBA = _jit is not None


def sincos(x, out=None):
    """Return ``(sin(x), cos(x))`` as float64 arrays shaped like ``x``.

    ``out`` may supply a pair of preallocated C-contiguous arrays.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if out is None:
        s = np.empty_like(x)
        c = np.empty_like(x)
    else:
        s, c = out
    if _jit is None or (x.size and np.max(np.abs(x)) > _BIG):
        np.sin(x, out=s)
        np.cos(x, out=c)
        return s, c
    _jit(x.reshape(-1), s.reshape(-1), c.reshape(-1))
    return s, c
