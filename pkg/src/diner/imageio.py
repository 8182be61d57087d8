"""Netpbm (PGM/PPM) and PFM readers and writers.

PGM/PPM samples are mapped linearly to ``[0, 1]`` (``value / maxval``);
16-bit samples are big-endian as the format requires. PFM stores float32
samples bottom-to-top; we write little-endian (negative scale) files and read
either byte order.
"""
import os
import re
import tempfile

import numpy as np

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


class ImageFormatError(ValueError):
    pass


def _read_header(buf, count):
    tokens, pos = [], 0
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ImageFormatError("truncated header")
        tokens.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def _check_length(path, buf, start, nbytes):
    if len(buf) - start < nbytes:
        raise ImageFormatError(f"{path}: raster truncated ({len(buf) - start} of {nbytes} bytes)")


def read_netpbm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported netpbm magic {magic!r}")
    (_, w, h, maxval), start = _read_header(buf, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    _check_length(path, buf, start, count * dtype.itemsize)
    raster = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    img = raster.astype(np.float64).reshape(h, w, channels) / maxval
    return img[..., 0] if channels == 1 else img


def read_pfm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic not in (b"Pf", b"PF"):
        raise ImageFormatError(f"{path}: not a PFM file")
    (_, w, h, scale), start = _read_header(buf, 4)
    w, h, scale = int(w), int(h), float(scale)
    channels = 3 if magic == b"PF" else 1
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    _check_length(path, buf, start, w * h * channels * 4)
    data = np.frombuffer(buf, dtype=dtype, count=w * h * channels, offset=start)
    img = data.reshape(h, w, channels)[::-1].astype(np.float32)
    return img[..., 0] if channels == 1 else img


def read_image(path):
    """Read PGM/PPM (as float64 in [0, 1]) or PFM (as float32)."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"Pf", b"PF"):
        return read_pfm(path)
    return read_netpbm(path)


def encode_netpbm(img, maxval=255):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        magic, channels = b"P5", 1
    elif img.ndim == 3 and img.shape[2] == 3:
        magic, channels = b"P6", 3
    else:
        raise ImageFormatError(f"cannot store shape {img.shape} as PGM/PPM")
    h, w = img.shape[:2]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(dtype)
    return magic + b"\n%d %d\n%d\n" % (w, h, maxval) + q.tobytes()


def encode_pfm(img):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        magic = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    else:
        raise ImageFormatError(f"cannot store shape {img.shape} as PFM")
    h, w = img.shape[:2]
    return magic + b"\n%d %d\n-1.0\n" % (w, h) + np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()


def atomic_write(path, payload):
    """Write bytes to ``path`` through a temporary file and an atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_image(path, img, maxval=255):
    """Write by extension: ``.pfm`` float, ``.pgm``/``.ppm`` quantized to ``maxval``."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".pfm":
        payload = encode_pfm(img)
    elif ext in (".pgm", ".ppm", ".pnm"):
        payload = encode_netpbm(img, maxval)
    else:
        raise ImageFormatError(f"unsupported image extension {ext!r}")
    atomic_write(path, payload)
