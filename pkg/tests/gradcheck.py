"""Central finite-difference helpers shared by the gradient tests."""
import numpy as np

from diner.network import backward, forward

H = 1e-6


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def numeric_grad(f, arr, h=H):
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def backbone_errors(bk, x, target):
    """Worst relative error over every parameter and the input, for a 1/2 L2 loss."""
    def loss():
        return 0.5 * np.sum((forward(bk, x) - target) ** 2)

    out, tr = forward(bk, x, trace=True)
    grads, dx = backward(bk, tr, out - target)
    errs = []
    for (dW, db), W, b in zip(grads, bk.weights, bk.biases):
        errs.append(rel_err(dW, numeric_grad(loss, W)))
        errs.append(rel_err(db, numeric_grad(loss, b)))
    errs.append(rel_err(dx, numeric_grad(loss, x)))
    return errs
