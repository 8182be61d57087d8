"""Coordinate-network backbone: ReLU MLP or SIREN, optional Fourier features.

The network is ``z0 = encode(x)``, ``z_l = act(W_l z_{l-1} + b_l)`` for the
hidden layers and a linear output layer. Forward and backward passes are
written out by hand over batches of row vectors.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, NumericError, ShapeError
from ._kernels import sincos
from .numerics import make_rng

ACTIVATIONS = ("relu", "sine")
DEFAULT_OMEGA0 = 30.0
DEFAULT_OCTAVES = 10


@dataclass(frozen=True)
class BackboneSpec:
    """Architecture of a backbone. ``depth`` counts hidden layers."""

    d_in: int
    d_out: int
    width: int = 64
    depth: int = 2
    activation: str = "relu"
    omega0: float = DEFAULT_OMEGA0
    octaves: int = 0  # 0 disables the Fourier encoding

    def __post_init__(self):
        if self.width < 1 or self.depth < 1:
            raise ConfigError(f"width and depth must be positive, got {self.width}x{self.depth}")
        if self.d_in < 1 or self.d_out < 1:
            raise ConfigError("d_in and d_out must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.omega0 > 0:
            raise ConfigError("omega0 must be positive")
        if self.octaves < 0:
            raise ConfigError("octaves must be >= 0")

    @property
    def encoded_width(self):
        return self.d_in * 2 * self.octaves if self.octaves else self.d_in

    def layer_shapes(self):
        dims = [self.encoded_width] + [self.width] * self.depth + [self.d_out]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    def to_dict(self):
        return dict(d_in=self.d_in, d_out=self.d_out, width=self.width, depth=self.depth,
                    activation=self.activation, omega0=self.omega0, octaves=self.octaves)


@dataclass
class Backbone:
    spec: BackboneSpec
    weights: list
    biases: list

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Yield arrays in a fixed order: W1, b1, W2, b2, ..."""
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b

    def copy(self):
        return Backbone(self.spec, [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases])

    def __call__(self, coords):
        return forward(self, coords)


@dataclass
class ForwardTrace:
    x: np.ndarray
    z0: np.ndarray
    # per hidden layer: activation argument (omega0 * (W z + b) for sine layers),
    # activation output, and the activation derivative up to the omega0 factor
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    dact: list = field(default_factory=list)


class Workspace:
    """Scratch buffers reused across calls, reallocated only on a shape change.

    Arrays returned by :func:`forward`/:func:`backward` with a workspace are
    views of these buffers and are overwritten by the next call.
    """

    _PAGE = 4096
    _STRIDE = 832  # bytes between successive buffers' page offsets, a multiple of 64

    def __init__(self):
        self._bufs = {}
        self._count = 0

    def get(self, name, shape, dtype=np.float64):
        buf = self._bufs.get(name)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = self._staggered(shape, np.dtype(dtype))
            self._bufs[name] = buf
        return buf

    def _staggered(self, shape, dtype):
        # Large same-sized buffers tend to start at the same offset within a
        # page; a kernel that streams through one and writes another then
        # suffers 4K aliasing stalls. Give each buffer its own page offset.
        nbytes = int(np.prod(shape)) * dtype.itemsize
        raw = np.empty(nbytes + self._PAGE, dtype=np.uint8)
        target = (self._count * self._STRIDE) % self._PAGE
        self._count += 1
        off = (target - raw.ctypes.data) % self._PAGE
        off -= off % dtype.itemsize
        return raw[off:off + nbytes].view(dtype).reshape(shape)


def _buffer(ws, name, shape, dtype=np.float64):
    return None if ws is None else ws.get(name, shape, dtype)


def init_backbone(spec, rng=0):
    """Draw initial weights for ``spec``.

    ReLU layers use He-uniform weights ``U(-sqrt(6/n), sqrt(6/n))``. Sine
    networks use ``U(-1/n, 1/n)`` for the first layer and
    ``U(-sqrt(6/n)/omega0, sqrt(6/n)/omega0)`` afterwards. Biases are
    ``U(-1/sqrt(n), 1/sqrt(n))``; ``n`` is always the fan-in.
    """
    rng = make_rng(rng)
    weights, biases = [], []
    for i, (fan_out, fan_in) in enumerate(spec.layer_shapes()):
        if spec.activation == "sine":
            bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / spec.omega0
        else:
            bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bb = 1.0 / np.sqrt(fan_in)
        biases.append(rng.uniform(-bb, bb, size=fan_out))
    return Backbone(spec, weights, biases)


def encode(x, octaves):
    """Fourier features ``(sin(2^k pi x), cos(2^k pi x))`` for k < octaves.

    Features are ordered component-major, then octave, then (sin, cos).
    ``octaves == 0`` returns ``x`` unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if not octaves:
        return x
    freqs = np.pi * 2.0 ** np.arange(octaves)
    s, c = sincos(x[..., :, None] * freqs)
    feat = np.stack((s, c), axis=-1)
    return feat.reshape(x.shape[:-1] + (x.shape[-1] * 2 * octaves,))


def _encode_backward(x, octaves, grad_feat):
    freqs = np.pi * 2.0 ** np.arange(octaves)
    s, c = sincos(x[..., :, None] * freqs)
    g = grad_feat.reshape(x.shape + (octaves, 2))
    return np.sum((g[..., 0] * c - g[..., 1] * s) * freqs, axis=-1)


def forward(bk, coords, trace=False, features=None, workspace=None):
    """Evaluate the backbone on a batch ``(B, d_in)``.

    With ``trace=True`` returns ``(output, ForwardTrace)``. ``features`` may
    carry a precomputed ``encode(coords, octaves)`` for fixed inputs.
    """
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != bk.spec.d_in:
        raise ShapeError(f"expected {bk.spec.d_in} input components, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input coordinate")
    z = encode(x, bk.spec.octaves) if features is None else features
    tr = ForwardTrace(x=x, z0=z) if trace else None
    sine = bk.spec.activation == "sine"
    w0 = bk.spec.omega0
    last = bk.n_layers - 1
    ws = workspace
    batch = x.shape[0]
    for i, (W, b) in enumerate(zip(bk.weights, bk.biases)):
        shape = (batch, W.shape[0])
        a = _buffer(ws, f"a{i}", shape)
        if sine and i < last:
            # fold omega0 into the (small) weights instead of scaling the batch
            a = np.matmul(z, (w0 * W).T, out=a)
            a += w0 * b
        else:
            a = np.matmul(z, W.T, out=a)
            a += b
        if i == last:
            z = a
            break
        if sine:
            out = None if ws is None else (ws.get(f"z{i}", shape), ws.get(f"d{i}", shape))
            z, d = sincos(a, out=out)
        else:
            d = np.greater(a, 0.0, out=_buffer(ws, f"d{i}", shape, bool))
            z_out = _buffer(ws, f"z{i}", shape) if tr is not None else a
            z = np.maximum(a, 0.0, out=z_out)
        if tr is not None:
            tr.pre.append(a)
            tr.post.append(z)
            tr.dact.append(d)
    if tr is not None:
        return z, tr
    return z


def backward(bk, trace, grad_out, input_grad=True, workspace=None):
    """Back-propagate ``dL/d(output)`` through the network.

    Returns ``(param_grads, input_grads)`` where ``param_grads`` is a list of
    ``(dW, db)`` per layer and ``input_grads`` is ``dL/dx`` for the raw
    (pre-encoding) coordinates, or ``None`` when ``input_grad`` is false.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n_hidden = bk.n_layers - 1
    if len(trace.pre) != n_hidden or g.shape != (trace.z0.shape[0], bk.spec.d_out):
        raise ShapeError("trace and upstream gradient do not match this backbone")
    grads = [None] * bk.n_layers
    # for sine layers g holds dL/da / omega0; the factor is applied to the small results
    scale = bk.spec.omega0 if bk.spec.activation == "sine" else 1.0
    for i in range(bk.n_layers - 1, -1, -1):
        z_prev = trace.post[i - 1] if i > 0 else trace.z0
        s = 1.0 if i == bk.n_layers - 1 else scale
        dW = g.T @ z_prev
        db = g.sum(axis=0)
        if s != 1.0:
            dW *= s
            db *= s
        grads[i] = (dW, db)
        if i == 0 and not input_grad:
            break
        W = s * bk.weights[i] if s != 1.0 else bk.weights[i]
        g = np.matmul(g, W, out=_buffer(workspace, f"g{i}", (g.shape[0], W.shape[1])))
        if i > 0:
            g *= trace.dact[i - 1]
    dx = None
    if input_grad:
        dx = _encode_backward(trace.x, bk.spec.octaves, g) if bk.spec.octaves else g
    return grads, dx
