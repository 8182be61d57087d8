"""Fitting coordinate networks, with or without a learnable coordinate table.

``fit`` minimizes ``L(P(f(c_i)), P(y_i))`` where ``c_i`` is either the
lattice coordinate of element ``i`` (plain INR) or row ``i`` of a
:class:`~diner.coord_table.CoordTable` (DINER). ``P`` is a measurement
process: the identity for representation tasks, or a physical forward model
such as :class:`~diner.lensless.LenslessProcess`.

Full-batch training takes one Adam step per epoch on the gradient summed
over all samples in table-row order, which makes runs bit-reproducible.
"""
import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .coord_table import CoordTable, lattice, new_table
from .exceptions import ConfigError, NumericError, ShapeError
from .network import Backbone, Workspace, backward, encode, forward, init_backbone
from .numerics import AdamState, adam_step, make_rng, seeded_permutation

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
ORDERS = ("identity", "sorted", "random")


# ----------------------------------------------------------------- data

@dataclass
class SampleSet:
    """A sampled signal on a regular lattice.

    ``values`` holds one row per element in row-major order of ``shape``;
    coordinates are implicit and normalized to ``[-1, 1]`` per axis.
    """

    shape: tuple
    values: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != int(np.prod(self.shape)):
            raise ShapeError(f"values {values.shape} do not cover a lattice of shape {self.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError("signal contains non-finite values")
        self.values = values

    @classmethod
    def from_grid(cls, grid, n_spatial=2):
        """Build from an array whose first ``n_spatial`` axes are the lattice."""
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim < n_spatial:
            raise ShapeError(f"grid of shape {grid.shape} has fewer than {n_spatial} axes")
        shape = grid.shape[:n_spatial]
        return cls(shape, grid.reshape(int(np.prod(shape)), -1))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d_in(self):
        return len(self.shape)

    @property
    def d_out(self):
        return self.values.shape[1]

    def coords(self):
        return lattice(self.shape)

    def to_grid(self, values=None):
        values = self.values if values is None else values
        grid = np.asarray(values).reshape(self.shape + (-1,))
        return grid[..., 0] if grid.shape[-1] == 1 else grid


@dataclass
class TrainConfig:
    epochs: int = 3000
    batch_size: int = 0  # 0 means full batch
    lr_net: float = 1e-3
    lr_table: float = None  # defaults to lr_net
    seed: int = 0
    use_table: bool = True
    freeze_table: bool = False
    loss: str = "l2"
    log_every: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr_net > 0 or (self.lr_table is not None and not self.lr_table > 0):
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        if self.loss != "l2":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    @property
    def table_lr(self):
        return self.lr_net if self.lr_table is None else self.lr_table

    def to_dict(self):
        return dict(epochs=self.epochs, batch_size=self.batch_size, lr_net=self.lr_net,
                    lr_table=self.lr_table, seed=self.seed, use_table=self.use_table,
                    freeze_table=self.freeze_table, loss=self.loss, log_every=self.log_every)


def default_lr(activation):
    return 1e-4 if activation == "sine" else 1e-3


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    HEADER = ("epoch", "loss", "psnr_db", "wall_ms")

    def append(self, epoch, loss, psnr_db, wall_ms):
        if self.rows and epoch <= self.rows[-1][0]:
            raise ValueError("metrics epochs must be strictly increasing")
        self.rows.append((int(epoch), float(loss), float(psnr_db), float(wall_ms)))

    @property
    def final_psnr(self):
        return self.rows[-1][2] if self.rows else float("nan")

    @property
    def final_loss(self):
        return self.rows[-1][1] if self.rows else float("nan")

    def column(self, name):
        k = self.HEADER.index(name)
        return np.array([r[k] for r in self.rows])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for epoch, loss, psnr_db, wall in self.rows:
            w.writerow([epoch, repr(loss), repr(psnr_db), f"{wall:.3f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != cls.HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        log = cls()
        for row in reader:
            log.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]))
        return log


# -------------------------------------------------------------- metrics

def psnr(a, b):
    """PSNR in dB for signals with peak 1, after clamping both to [0, 1].

    Identical inputs give ``inf``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr of mismatched shapes {a.shape} and {b.shape}")
    mse = float(np.mean((np.clip(a, 0.0, 1.0) - np.clip(b, 0.0, 1.0)) ** 2))
    return psnr_from_mse(mse)


def psnr_from_mse(mse, peak=1.0):
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def luminance(values):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1 or values.shape[1] == 1:
        return values.reshape(-1)
    if values.shape[1] == 3:
        return values @ LUMA_WEIGHTS
    return values.mean(axis=1)


def rearrange(data, order="identity", seed=0):
    """Permute the values of ``data`` over its lattice.

    Returns ``(rearranged, perm)`` with ``rearranged.values[j] == data.values[perm[j]]``.
    ``"sorted"`` orders ascending by luminance (stable, so ties keep their
    original order); ``"random"`` draws a seeded permutation.
    """
    if order == "identity":
        perm = np.arange(data.n)
    elif order == "sorted":
        perm = np.argsort(luminance(data.values), kind="stable")
    elif order == "random":
        perm = seeded_permutation(make_rng(seed), data.n)
    else:
        raise ConfigError(f"unknown order {order!r}; expected one of {ORDERS}")
    return SampleSet(data.shape, data.values[perm]), perm


# --------------------------------------------------------------- process

class IdentityProcess:
    """Plain regression: mean squared error against the target values."""

    full_batch_only = False

    def __init__(self, targets):
        self.targets = np.asarray(targets, dtype=np.float64)

    def loss_and_grad(self, pred, rows=None):
        y = self.targets if rows is None else self.targets[rows]
        diff = pred - y
        with np.errstate(over="ignore", invalid="ignore"):
            loss = float(np.mean(diff * diff))
        return loss, diff * (2.0 / diff.size)

    def psnr(self, pred):
        return psnr(pred, self.targets)


# ----------------------------------------------------------------- model

@dataclass
class INRModel:
    """A backbone, an optional coordinate table and the optimizer state."""

    backbone: Backbone
    table: CoordTable = None
    net_state: list = None
    epoch: int = 0

    def __post_init__(self):
        if self.net_state is None:
            self.net_state = [AdamState.zeros_like(p) for p in self.backbone.parameters()]

    def input_coords(self, shape):
        if self.table is not None:
            return self.table.entries
        return lattice(shape)

    def predict(self, shape):
        return forward(self.backbone, self.input_coords(shape))


def build_model(spec, data_shape=None, use_table=True, table_init="zero", table_scale=1e-4, seed=0):
    """Backbone initialized from ``seed`` plus an optional table.

    The table draws from a separate stream so that toggling ``use_table``
    leaves the backbone initialization unchanged.
    """
    backbone = init_backbone(spec, make_rng(seed))
    table = None
    if use_table:
        if data_shape is None:
            raise ConfigError("a table needs the data shape")
        n = int(np.prod(data_shape))
        table = new_table(n, spec.d_in, table_init, rng=make_rng(seed + 0x9E3779B9),
                          scale=table_scale, shape=tuple(data_shape))
    return INRModel(backbone, table)


def fit(model, data, cfg, process=None, coords=None):
    """Train ``model`` in place on ``data``; returns ``(model, MetricsLog)``.

    Without a table the inputs are the lattice coordinates of ``data``, or
    ``coords`` (one row per sample) when given. The logged loss and PSNR at
    epoch ``e`` describe the model before that epoch's update; a final row at
    ``epoch == cfg.epochs`` describes the trained model.
    """
    bk = model.backbone
    if coords is not None:
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[0] != data.n:
            raise ShapeError(f"{coords.shape[0]} coordinates for {data.n} samples")
    d_in = data.d_in if coords is None else coords.shape[1]
    if bk.spec.d_in != d_in:
        raise ConfigError(f"backbone takes {bk.spec.d_in}-D coordinates, data is {d_in}-D")
    if process is None:
        process = IdentityProcess(data.values)
        if bk.spec.d_out != data.d_out:
            raise ConfigError(f"backbone emits {bk.spec.d_out} channels, data has {data.d_out}")
    use_table = cfg.use_table and model.table is not None
    if cfg.use_table and model.table is None:
        raise ConfigError("use_table is set but the model has no coordinate table")
    if use_table and (model.table.n != data.n or model.table.d_in != d_in):
        raise ConfigError(f"table {model.table.n}x{model.table.d_in} does not match data "
                          f"{data.n}x{data.d_in}")
    full_batch = cfg.batch_size == 0 or cfg.batch_size >= data.n
    if process.full_batch_only and not full_batch:
        raise ConfigError("this measurement process requires full-batch training")

    lattice_coords = None
    if not use_table:
        lattice_coords = lattice(data.shape) if coords is None else coords
    features = None
    if lattice_coords is not None and bk.spec.octaves:
        features = encode(lattice_coords, bk.spec.octaves)
    update_table = use_table and not cfg.freeze_table
    rng = make_rng(cfg.seed)
    params = list(bk.parameters())
    log = MetricsLog()
    t0 = time.perf_counter()

    def coords_for(rows):
        src = model.table.entries if use_table else lattice_coords
        return src if rows is None else src[rows]

    ws = Workspace()

    def run_forward(rows, trace=False):
        feats = features if features is None or rows is None else features[rows]
        return forward(bk, coords_for(rows), trace=trace, features=feats,
                       workspace=ws if trace else None)

    def step(rows, epoch):
        pred, trace = run_forward(rows, trace=True)
        loss, grad = process.loss_and_grad(pred, rows)
        if not np.isfinite(loss):
            raise NumericError(f"loss became non-finite at epoch {epoch}")
        param_grads, coord_grads = backward(bk, trace, grad, input_grad=update_table, workspace=ws)
        flat = [g for pair in param_grads for g in pair]
        for p, g, st in zip(params, flat, model.net_state):
            adam_step(p, g, st, cfg.lr_net)
        if update_table:
            model.table.step_rows(rows, coord_grads, cfg.table_lr)
        return loss, pred

    for epoch in range(cfg.epochs):
        if full_batch:
            loss, pred = step(None, epoch)
            if epoch % cfg.log_every == 0:
                log.append(model.epoch + epoch, loss, process.psnr(pred),
                           (time.perf_counter() - t0) * 1e3)
        else:
            order = rng.permutation(data.n)
            for start in range(0, data.n, cfg.batch_size):
                rows = np.sort(order[start:start + cfg.batch_size])
                step(rows, epoch)
            if epoch % cfg.log_every == 0:
                pred = run_forward(None)
                loss, _ = process.loss_and_grad(pred)
                log.append(model.epoch + epoch, loss, process.psnr(pred),
                           (time.perf_counter() - t0) * 1e3)

    pred = run_forward(None)
    loss, _ = process.loss_and_grad(pred)
    if not np.isfinite(loss):
        raise NumericError(f"loss became non-finite at epoch {cfg.epochs}")
    model.epoch += cfg.epochs
    log.append(model.epoch, loss, process.psnr(pred), (time.perf_counter() - t0) * 1e3)
    logger.info("fit done: epoch=%d loss=%.3e psnr=%.2f dB", model.epoch, loss, log.final_psnr)
    return model, log


def fit_signal(data, spec, cfg, table_init="zero", table_scale=1e-4, process=None):
    """Initialize a model from ``cfg.seed`` and train it on ``data``."""
    model = build_model(spec, data.shape, cfg.use_table, table_init, table_scale, cfg.seed)
    return fit(model, data, cfg, process)


# ---------------------------------------------------------- invariance

def invariance_report(data, spec, cfg, orders=ORDERS, order_seed=None):
    """Train one DINER per arrangement of ``data`` and compare the results.

    Every run uses the same backbone seed and an all-zero table. Tables are
    mapped back to the original element order through the known
    permutations before comparison.
    """
    if not cfg.use_table:
        raise ConfigError("the invariance experiment needs use_table=True")
    order_seed = cfg.seed if order_seed is None else order_seed
    runs = []
    for order in orders:
        arranged, perm = rearrange(data, order, seed=order_seed)
        model, log = fit_signal(arranged, spec, cfg, table_init="zero")
        aligned = np.empty_like(model.table.entries)
        aligned[perm] = model.table.entries
        runs.append(dict(order=order, psnr_db=log.final_psnr, loss=log.final_loss,
                         aligned=aligned, backbone=model.backbone))
    gap = 0.0
    table_residual = 0.0
    param_residual = 0.0
    ref = runs[0]
    for i, a in enumerate(runs):
        for b in runs[i + 1:]:
            gap = max(gap, abs(a["psnr_db"] - b["psnr_db"]))
        table_residual = max(table_residual, float(np.max(np.abs(a["aligned"] - ref["aligned"]))))
        for p, q in zip(a["backbone"].parameters(), ref["backbone"].parameters()):
            param_residual = max(param_residual, float(np.max(np.abs(p - q))))
    return dict(
        orders=list(orders),
        psnr_db={r["order"]: r["psnr_db"] for r in runs},
        final_loss={r["order"]: r["loss"] for r in runs},
        max_psnr_gap_db=gap,
        table_residual=table_residual,
        param_residual=param_residual,
    )
