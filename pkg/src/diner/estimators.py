"""scikit-learn style estimators wrapping the training loop.

``INRRegressor`` is a plain coordinate network: ``fit(X, y)`` with float
coordinates ``X`` and signal values ``y``. ``DINERRegressor`` adds the
learnable coordinate table: ``X`` holds integer lattice positions, each row of
the table belongs to one position, and ``transform`` returns the learned
mapped coordinates.
"""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .coord_table import TABLE_INITS, flatten_coord
from .exceptions import ConfigError
from .network import DEFAULT_OCTAVES, DEFAULT_OMEGA0, BackboneSpec, forward
from .spectral import extract_learned_inr
from .training import SampleSet, TrainConfig, build_model, default_lr, fit, psnr

BACKBONES = {"mlp": "relu", "siren": "sine"}


def _check_y(y):
    y = np.asarray(y, dtype=np.float64)
    return y[:, None] if y.ndim == 1 else y


def _restore_y_shape(pred, single_output):
    return pred[:, 0] if single_output else pred


class _BaseINR(RegressorMixin, BaseEstimator):

    def _backbone_spec(self, d_in, d_out):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {sorted(BACKBONES)}, got {self.backbone!r}")
        if self.encoding not in ("none", "pe"):
            raise ConfigError(f"encoding must be 'none' or 'pe', got {self.encoding!r}")
        return BackboneSpec(d_in=d_in, d_out=d_out, width=self.width, depth=self.depth,
                            activation=BACKBONES[self.backbone], omega0=self.omega0,
                            octaves=self.octaves if self.encoding == "pe" else 0)

    def _train_config(self, use_table, lr_table=None):
        lr = self.lr if self.lr is not None else default_lr(BACKBONES[self.backbone])
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr_net=lr,
                           lr_table=lr_table, seed=self.seed, use_table=use_table,
                           log_every=self.log_every)

    def score(self, X, y):
        """PSNR (dB) of the clamped prediction against ``y``."""
        return psnr(_check_y(self.predict(X)), _check_y(y))


class INRRegressor(_BaseINR):
    """Coordinate network (ReLU MLP or SIREN, optional Fourier features).

    Parameters mirror the CLI flags; ``lr=None`` picks 1e-3 for ``mlp`` and
    1e-4 for ``siren``. Training is full-batch Adam unless ``batch_size > 0``.
    """

    def __init__(self, backbone="mlp", width=64, depth=2, encoding="none",
                 octaves=DEFAULT_OCTAVES, omega0=DEFAULT_OMEGA0, epochs=3000, lr=None,
                 batch_size=0, seed=0, log_every=100):
        self.backbone = backbone
        self.width = width
        self.depth = depth
        self.encoding = encoding
        self.octaves = octaves
        self.omega0 = omega0
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.log_every = log_every

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._single_output = y.ndim == 1
        y = _check_y(y)
        spec = self._backbone_spec(X.shape[1], y.shape[1])
        cfg = self._train_config(use_table=False)
        model = build_model(spec, use_table=False, seed=self.seed)
        self.model_, self.metrics_ = fit(model, SampleSet((len(X),), y), cfg, coords=X)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return _restore_y_shape(forward(self.model_.backbone, X), self._single_output)


class DINERRegressor(TransformerMixin, _BaseINR):
    """Coordinate network behind a learnable full-resolution coordinate table.

    ``X`` in :meth:`fit` holds the integer lattice position of every sample
    (one row per element, all positions present exactly once); ``shape``
    defaults to ``X.max(axis=0) + 1``.
    """

    def __init__(self, backbone="mlp", width=64, depth=2, encoding="none",
                 octaves=DEFAULT_OCTAVES, omega0=DEFAULT_OMEGA0, epochs=3000, lr=None,
                 lr_table=None, table_init="uniform", table_scale=1e-4, batch_size=0, seed=0,
                 log_every=100, shape=None):
        self.backbone = backbone
        self.width = width
        self.depth = depth
        self.encoding = encoding
        self.octaves = octaves
        self.omega0 = omega0
        self.epochs = epochs
        self.lr = lr
        self.lr_table = lr_table
        self.table_init = table_init
        self.table_scale = table_scale
        self.batch_size = batch_size
        self.seed = seed
        self.log_every = log_every
        self.shape = shape

    def _flat_index(self, X):
        X = check_array(X, dtype=None)
        if not np.issubdtype(X.dtype, np.integer):
            if not np.all(np.mod(X, 1) == 0):
                raise ValueError("DINERRegressor expects integer lattice positions")
            X = X.astype(np.int64)
        return flatten_coord(X, self.shape_)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=None)
        if self.table_init not in TABLE_INITS:
            raise ConfigError(f"table_init must be one of {TABLE_INITS}")
        self._single_output = y.ndim == 1
        y = _check_y(y)
        self.shape_ = tuple(int(s) for s in (self.shape or np.max(X, axis=0) + 1))
        flat = self._flat_index(X)
        n = int(np.prod(self.shape_))
        if len(flat) != n or len(np.unique(flat)) != n:
            raise ValueError(f"X must list every position of the {self.shape_} lattice exactly once")
        values = np.empty_like(y)
        values[flat] = y
        data = SampleSet(self.shape_, values)
        spec = self._backbone_spec(len(self.shape_), y.shape[1])
        cfg = self._train_config(use_table=True, lr_table=self.lr_table)
        model = build_model(spec, self.shape_, True, self.table_init, self.table_scale, self.seed)
        self.model_, self.metrics_ = fit(model, data, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Mapped coordinates (table rows) for lattice positions ``X``."""
        check_is_fitted(self, "model_")
        return self.model_.table.lookup(self._flat_index(X)).copy()

    def predict(self, X):
        mapped = self.transform(X)
        pred = forward(self.model_.backbone, mapped)
        return _restore_y_shape(pred, self._single_output)

    def reconstruct(self):
        """The fitted signal on the full lattice, shaped ``shape_ (+ channels)``."""
        check_is_fitted(self, "model_")
        pred = self.model_.predict(self.shape_)
        return SampleSet(self.shape_, pred).to_grid()

    def learned_inr(self, resolution=None):
        """Backbone evaluated on an even mesh over the mapped-coordinate bounding box."""
        check_is_fitted(self, "model_")
        return extract_learned_inr(self.model_.backbone, self.model_.table,
                                   resolution or self.shape_)


def grid_to_xy(grid, n_spatial=2):
    """Split a sampled signal into lattice positions ``X`` and values ``y``."""
    grid = np.asarray(grid, dtype=np.float64)
    shape = grid.shape[:n_spatial]
    X = np.stack(np.unravel_index(np.arange(int(np.prod(shape))), shape), axis=-1)
    return X, grid.reshape(len(X), -1) if grid.ndim > n_spatial else grid.reshape(-1)
