"""Command-line entry point: ``diner fit | invariance | spectrum | lensless``.

Exit codes:
  0  success
  2  usage error (bad flags)
  3  input/output error (missing or unreadable file, failed write)
  4  invalid configuration
  5  numerical failure (non-finite loss, sampling violation)
  6  invariance gap not below --tolerance-db
  7  checkpoint format or version mismatch
"""
import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
import warnings

import numpy as np

from . import __version__, lensless
from .checkpoint import CheckpointFormatError, decode_checkpoint, encode_checkpoint
from .exceptions import CheckpointVersionError, ConfigError, NumericError, SamplingError, ShapeError, SizeError
from .imageio import ImageFormatError, encode_netpbm, encode_pfm, read_image
from .lensless import OpticsConfig, make_phantom, reconstruct, simulate, MeasurementSet
from .network import DEFAULT_OCTAVES, DEFAULT_OMEGA0, BackboneSpec
from .numerics import is_power_of_two
from .spectral import band_ratios, extract_learned_inr
from .training import ORDERS, SampleSet, TrainConfig, default_lr, fit_signal, invariance_report

logger = logging.getLogger("diner")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5
EXIT_TOLERANCE = 6
EXIT_CHECKPOINT = 7


class OutputBundle:
    """Collects output files in memory and publishes them all at once.

    Files are written to a temporary directory next to the destination and
    then renamed into place, so a failure leaves no partial outputs.
    """

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.files = {}

    def add(self, name, payload):
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        self.files[name] = payload

    def publish(self):
        os.makedirs(self.out_dir, exist_ok=True)
        staging = tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir)
        try:
            for name, payload in self.files.items():
                with open(os.path.join(staging, name), "wb") as fh:
                    fh.write(payload)
            for name in self.files:
                os.replace(os.path.join(staging, name), os.path.join(self.out_dir, name))
        finally:
            shutil.rmtree(staging, ignore_errors=True)


# ------------------------------------------------------------- loading

def load_signal(path):
    """Load an image (PGM/PPM/PFM) or a video manifest; returns ``(grid, n_spatial)``."""
    if path.endswith(".json"):
        with open(path) as fh:
            doc = json.load(fh)
        base = os.path.dirname(os.path.abspath(path))
        frames = [np.asarray(read_image(os.path.join(base, f)), dtype=np.float64)
                  for f in doc["frames"]]
        return np.stack(frames), 3
    return np.asarray(read_image(path), dtype=np.float64), 2


def _backbone_spec(args, d_in, d_out):
    activation = "sine" if args.backbone == "siren" else "relu"
    if args.encoding == "pe" and args.backbone == "siren":
        warnings.warn("positional encoding in front of a SIREN is unusual", UserWarning)
    return BackboneSpec(d_in=d_in, d_out=d_out, width=args.width, depth=args.depth,
                        activation=activation, omega0=args.omega0,
                        octaves=args.octaves if args.encoding == "pe" else 0)


def _train_config(args, use_table, default_epochs=3000, lr=None):
    activation = "sine" if args.backbone == "siren" else "relu"
    return TrainConfig(epochs=args.epochs or default_epochs, batch_size=args.batch,
                       lr_net=args.lr or lr or default_lr(activation), lr_table=args.lr_table,
                       seed=args.seed, use_table=use_table, log_every=args.log_every)


def _grid_payloads(name, grid, n_spatial):
    """Encode a reconstruction: PGM/PPM for images, one PFM per frame for video."""
    grid = np.clip(grid, 0.0, 1.0)
    if n_spatial == 2:
        ext = "ppm" if grid.ndim == 3 else "pgm"
        return {f"{name}.{ext}": encode_netpbm(grid)}
    return {f"{name}_{t:03d}.pfm": encode_pfm(frame) for t, frame in enumerate(grid)}


# ------------------------------------------------------------ commands

def cmd_fit(args):
    grid, n_spatial = load_signal(args.input)
    data = SampleSet.from_grid(grid, n_spatial)
    spec = _backbone_spec(args, data.d_in, data.d_out)
    default_epochs = 3000 if n_spatial == 2 else 500
    cfg = _train_config(args, args.diner, default_epochs)
    model, log = fit_signal(data, spec, cfg, table_init=args.table_init, table_scale=args.table_scale)
    recon = data.to_grid(model.predict(data.shape))
    bundle = OutputBundle(args.out)
    bundle.add("checkpoint.dinr", encode_checkpoint(model, cfg.to_dict(),
                                                    extra=dict(shape=list(data.shape))))
    bundle.add("metrics.csv", log.to_csv())
    for name, payload in _grid_payloads("reconstruction", recon, n_spatial).items():
        bundle.add(name, payload)
    summary = dict(final_psnr_db=log.final_psnr, final_loss=log.final_loss, epochs=model.epoch)
    bundle.add("summary.json", json.dumps(summary, indent=2))
    bundle.publish()
    print(json.dumps(summary))
    return EXIT_OK


def cmd_invariance(args):
    grid, n_spatial = load_signal(args.input)
    data = SampleSet.from_grid(grid, n_spatial)
    orders = [o.strip() for o in args.orders.split(",") if o.strip()]
    for o in orders:
        if o not in ORDERS:
            raise ConfigError(f"unknown order {o!r}; expected one of {ORDERS}")
    spec = _backbone_spec(args, data.d_in, data.d_out)
    cfg = _train_config(args, True, default_epochs=2000)
    report = invariance_report(data, spec, cfg, orders)
    report["tolerance_db"] = args.tolerance_db
    report["passed"] = report["max_psnr_gap_db"] < args.tolerance_db
    text = json.dumps(report, indent=2)
    if args.out:
        bundle = OutputBundle(os.path.dirname(os.path.abspath(args.out)))
        bundle.add(os.path.basename(args.out), text)
        bundle.publish()
    print(text)
    return EXIT_OK if report["passed"] else EXIT_TOLERANCE


def _pad_pow2(img):
    h, w = img.shape[:2]
    H = 1 << (h - 1).bit_length()
    W = 1 << (w - 1).bit_length()
    if (H, W) == (h, w):
        return img
    pad = [(0, H - h), (0, W - w)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad)


def cmd_spectrum(args):
    img = np.asarray(read_image(args.input), dtype=np.float64)
    padded = _pad_pow2(img)
    result = dict(original_extent=list(img.shape[:2]), padded_extent=list(padded.shape[:2]),
                  input=band_ratios(padded, args.bands).to_dict())
    if args.checkpoint:
        with open(args.checkpoint, "rb") as fh:
            model, meta = decode_checkpoint(fh.read())
        if model.table is None:
            raise ConfigError("the checkpoint has no coordinate table to extract a learned INR from")
        shape = tuple(meta.get("extra", {}).get("shape", img.shape[:2]))
        learned = extract_learned_inr(model.backbone, model.table, shape)
        result["learned_inr"] = band_ratios(_pad_pow2(learned), args.bands).to_dict()
    text = json.dumps(result, indent=2)
    if args.out:
        bundle = OutputBundle(os.path.dirname(os.path.abspath(args.out)))
        bundle.add(os.path.basename(args.out), text)
        bundle.publish()
    print(text)
    return EXIT_OK


def _optics(args):
    return OpticsConfig(wavelength=args.wavelength, pixel_pitch=args.pitch,
                        heights=tuple(float(z) for z in args.heights.split(",")))


def cmd_lensless_simulate(args):
    optics = _optics(args)
    shape = (args.size, args.size)
    if args.phantom == "ones":
        obj = np.ones(shape, dtype=np.complex128)
    else:
        obj = make_phantom(shape, seed=args.seed)
    meas = simulate(obj, optics)
    bundle = OutputBundle(args.out)
    files = []
    for k, img in enumerate(meas.intensities):
        name = f"intensity_{k:02d}.pfm"
        bundle.add(name, encode_pfm(img))
        files.append(name)
    bundle.add("truth_amplitude.pfm", encode_pfm(np.abs(obj)))
    bundle.add("truth_phase.pfm", encode_pfm(np.angle(obj)))
    manifest = dict(optics.manifest(), files=files)
    bundle.add("manifest.json", json.dumps(manifest, indent=2))
    bundle.publish()
    print(json.dumps(dict(heights_m=list(optics.heights), files=files)))
    return EXIT_OK


def load_measurements(manifest_path):
    with open(manifest_path) as fh:
        doc = json.load(fh)
    optics = OpticsConfig.from_manifest(doc)
    base = os.path.dirname(os.path.abspath(manifest_path))
    stack = np.stack([np.asarray(read_image(os.path.join(base, f)), dtype=np.float64)
                      for f in doc["files"]])
    return MeasurementSet(stack, optics.heights), optics


def cmd_lensless_reconstruct(args):
    meas, optics = load_measurements(args.manifest)
    if not is_power_of_two(meas.shape[0]) or not is_power_of_two(meas.shape[1]):
        raise SizeError(f"measurement extent {meas.shape} is not a power of two")
    args.backbone = args.backbone or "siren"
    spec = BackboneSpec(d_in=2, d_out=2, width=args.width, depth=args.depth,
                        activation="sine" if args.backbone == "siren" else "relu",
                        omega0=args.omega0)
    cfg = _train_config(args, use_table=args.diner, default_epochs=lensless.DEFAULT_EPOCHS,
                        lr=lensless.DEFAULT_LR)
    field, model, log = reconstruct(meas, optics, cfg, spec, table_init=args.table_init,
                                    table_scale=args.table_scale)
    bundle = OutputBundle(args.out)
    bundle.add("amplitude.pfm", encode_pfm(np.abs(field)))
    bundle.add("phase.pfm", encode_pfm(np.angle(field)))
    bundle.add("metrics.csv", log.to_csv())
    bundle.add("checkpoint.dinr", encode_checkpoint(model, cfg.to_dict(),
                                                    extra=dict(shape=list(meas.shape))))
    summary = dict(measurement_psnr_db=log.final_psnr, final_loss=log.final_loss)
    bundle.add("summary.json", json.dumps(summary, indent=2))
    bundle.publish()
    print(json.dumps(summary))
    return EXIT_OK


# -------------------------------------------------------------- parser

def _add_model_flags(p, backbone_default="mlp"):
    p.add_argument("--backbone", choices=("mlp", "siren"), default=backbone_default)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--depth", type=int, default=2, help="number of hidden layers")
    p.add_argument("--encoding", choices=("none", "pe"), default="none")
    p.add_argument("--octaves", type=int, default=DEFAULT_OCTAVES)
    p.add_argument("--omega0", type=float, default=DEFAULT_OMEGA0)
    p.add_argument("--table-init", choices=("zero", "grid", "uniform"), default="uniform")
    p.add_argument("--table-scale", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None,
                   help="network learning rate (default 1e-3 for mlp, 1e-4 for siren, "
                        "1e-3 for lensless reconstruct)")
    p.add_argument("--lr-table", type=float, default=None, help="defaults to --lr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=0, help="mini-batch size, 0 for full batch")
    p.add_argument("--log-every", type=int, default=100)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="diner", description="Coordinate networks with a learnable coordinate table.",
        epilog=__doc__.split("\n", 2)[2], formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an image (PGM/PPM/PFM) or a video manifest")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--diner", action="store_true", help="use a learnable coordinate table")
    _add_model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("invariance", help="train on several arrangements and compare")
    p.add_argument("--input", required=True)
    p.add_argument("--orders", default="identity,sorted,random")
    p.add_argument("--tolerance-db", type=float, default=0.1)
    p.add_argument("--out", default=None, help="write the JSON report here")
    _add_model_flags(p)
    p.set_defaults(func=cmd_invariance, table_init="zero")

    p = sub.add_parser("spectrum", help="frequency-band ratios of an image and a learned INR")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--bands", type=int, default=4)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("lensless", help="multi-height lensless imaging")
    lsub = p.add_subparsers(dest="lensless_command", required=True)
    for name, func in (("simulate", cmd_lensless_simulate), ("reconstruct", cmd_lensless_reconstruct)):
        q = lsub.add_parser(name)
        q.add_argument("--out", required=True, help="output directory")
        q.set_defaults(func=func)
        if name == "simulate":
            q.add_argument("--phantom", choices=("disc", "ones"), default="disc")
            q.add_argument("--size", type=int, default=64)
            q.add_argument("--seed", type=int, default=0)
            q.add_argument("--wavelength", type=float, default=lensless.DEFAULT_WAVELENGTH)
            q.add_argument("--pitch", type=float, default=lensless.DEFAULT_PITCH)
            q.add_argument("--heights", default=",".join(f"{z:g}" for z in lensless.DEFAULT_HEIGHTS),
                           help="comma-separated distances in meters")
        else:
            q.add_argument("--manifest", required=True)
            q.add_argument("--no-diner", dest="diner", action="store_false")
            _add_model_flags(q, backbone_default="siren")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits

        limits = threadpool_limits(args.threads)
    try:
        with limits:
            return args.func(args)
    except (OSError, ImageFormatError, json.JSONDecodeError, KeyError) as exc:
        print(f"diner: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CheckpointFormatError, CheckpointVersionError) as exc:
        print(f"diner: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (NumericError, SamplingError) as exc:
        print(f"diner: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, SizeError) as exc:
        print(f"diner: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
